//! Training objectives: point-sample shape loss, parameter
//! classification/regression losses, the physical-violation loss, a
//! cooperative projection term and the joint objective.

mod cooperative;
mod joint;
mod param_loss;
mod physical;
mod point_sample;

pub use cooperative::{bounds_signature, BoxGradient, CooperativeLoss, CooperativeOutput, ProjectedBoundsLoss};
pub use cooperative::projected_bounds;
pub use joint::{joint_loss, joint_signature, JointInputs, JointOutput};
pub use param_loss::{
    binned_cls, binned_reg, camera_loss, layout_loss, len_odn_loss, object_loss, ParamLoss,
};
pub use physical::{
    nearest_neighbors, physical_signature, physical_violation, physical_violation_loss,
    sample_inside_points, ObjectSampleStats,
    PhysicalConfig, PhysicalOutput, PhysicalSamples,
};
pub use point_sample::{point_sample_loss, PointLoss, PointSample};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::scene::SceneError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{0} sample set is empty")]
    EmptySamples(&'static str),
    #[error("prediction has {pred} objects but ground truth has {gt}")]
    Correspondence { pred: usize, gt: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene has no ground truth")]
    MissingGroundTruth,
}

/// Loss weights. Defaults follow the published training setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub near_surface: f64,
    pub uniform: f64,
    pub center: f64,
    pub cooperative: f64,
    pub physical: f64,
    /// Sigmoid sharpness applied to field values.
    pub alpha: f64,
    /// Neighbors queried per object by the physical-violation loss.
    pub k: usize,
    pub pitch: f64,
    pub pitch_reg: f64,
    pub roll: f64,
    pub roll_reg: f64,
    pub layout_center: f64,
    pub layout_size: f64,
    pub layout_yaw: f64,
    pub layout_yaw_reg: f64,
    pub offset: f64,
    pub distance: f64,
    pub distance_reg: f64,
    pub size: f64,
    pub yaw: f64,
    pub yaw_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            near_surface: 0.1,
            uniform: 1.0,
            center: 0.2,
            cooperative: 150.0,
            physical: 20.0,
            alpha: 100.0,
            k: 4,
            pitch: 0.25,
            pitch_reg: 40.0,
            roll: 0.25,
            roll_reg: 20.0,
            layout_center: 10.0,
            layout_size: 10.0,
            layout_yaw: 0.25,
            layout_yaw_reg: 30.0,
            offset: 1.0,
            distance: 0.75,
            distance_reg: 6.7,
            size: 10.0,
            yaw: 0.33,
            yaw_reg: 30.0,
        }
    }
}

/// Named loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub len: f64,
    pub odn: f64,
    /// Unweighted cooperative term.
    pub co: f64,
    /// Unweighted physical-violation term.
    pub phy: f64,
    pub weighted_co: f64,
    pub weighted_phy: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(len: f64, odn: f64, co: f64, phy: f64, weights: &LossWeights) -> Self {
        let weighted_co = weights.cooperative * co;
        let weighted_phy = weights.physical * phy;
        Self {
            len,
            odn,
            co,
            phy,
            weighted_co,
            weighted_phy,
            total: len + odn + weighted_co + weighted_phy,
        }
    }

    /// Elementwise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            out.len += r.len;
            out.odn += r.odn;
            out.co += r.co;
            out.phy += r.phy;
            out.weighted_co += r.weighted_co;
            out.weighted_phy += r.weighted_phy;
            out.total += r.total;
        }
        out.len /= n;
        out.odn /= n;
        out.co /= n;
        out.phy /= n;
        out.weighted_co /= n;
        out.weighted_phy /= n;
        out.total /= n;
        out
    }
}

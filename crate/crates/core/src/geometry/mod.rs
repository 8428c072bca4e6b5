//! Camera and box parameterizations in the world frame.
//!
//! World frame: origin at the camera center, `y` up, `x` along the camera's
//! forward direction projected to the floor, `z` to the right. Image
//! coordinates: `u` grows to the right, `v` grows downward.

mod bins;
mod boxes;
mod camera;

pub use bins::{wrap_angle, BinSpec, BinSpecs};
pub use boxes::{box_corners, corners_jacobian, iou3d, yaw_matrix, yaw_matrix_derivative, WorldBox};
pub use camera::{
    camera_rotation, camera_rotation_derivatives, forward_project, project_point,
    project_point_jacobian, projected_box_bounds, recover_world_box, recover_center_jacobian, CameraIntrinsics,
    CameraPose, CenterJacobian, LayoutBox, ObjectBoxParam, Projection,
};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("point is behind the camera (forward depth {0})")]
    BehindCamera(f64),
    #[error("value {value} outside bin range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("bin index {index} out of range for {count} bins")]
    BadBin { index: usize, count: usize },
}

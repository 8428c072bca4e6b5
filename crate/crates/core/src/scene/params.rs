//! Flat parameter vectors for objects, layout and camera, and the residual
//! update that refines them.
//!
//! Binned quantities are stored as per-bin logits followed by per-bin
//! residuals. Every bin's residual encodes the same value relative to that
//! bin's center, so whichever bin wins the argmax decodes consistently.

use std::ops::Range;

use super::SceneError;
use crate::geometry::{
    wrap_angle, BinSpec, BinSpecs, CameraPose, GeometryError, LayoutBox, ObjectBoxParam,
};

/// Logit assigned to the active bin when a value is encoded.
pub const BIN_CONFIDENCE: f64 = 5.0;
/// Refined distances are kept at or above this (meters).
pub const MIN_DISTANCE: f64 = 0.1;
/// Refined extents are kept at or above this (meters).
pub const MIN_SIZE: f64 = 0.05;

pub const OBJ_PARAM_DIM: usize = 33;
pub const LAYOUT_PARAM_DIM: usize = 22;
pub const CAMERA_PARAM_DIM: usize = 8;

/// Index ranges inside an object vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSlots {
    pub delta: Range<usize>,
    pub distance_logits: Range<usize>,
    pub distance_residuals: Range<usize>,
    pub size: Range<usize>,
    pub yaw_logits: Range<usize>,
    pub yaw_residuals: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutSlots {
    pub center: Range<usize>,
    pub size: Range<usize>,
    pub yaw_logits: Range<usize>,
    pub yaw_residuals: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraSlots {
    pub pitch_logits: Range<usize>,
    pub pitch_residuals: Range<usize>,
    pub roll_logits: Range<usize>,
    pub roll_residuals: Range<usize>,
}

fn span(start: &mut usize, len: usize) -> Range<usize> {
    let r = *start..*start + len;
    *start += len;
    r
}

/// Where each refined physical value came from: `(vector index, factor)`
/// such that `∂value/∂vector[index] = factor`. `None` marks a value pinned
/// by a lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectParamJacobian {
    pub delta: [(usize, f64); 2],
    pub distance: Option<(usize, f64)>,
    pub size: [Option<usize>; 3],
    pub yaw: (usize, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutParamJacobian {
    pub center: [usize; 3],
    pub size: [Option<usize>; 3],
    pub yaw: (usize, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParamJacobian {
    pub beta: (usize, f64),
    pub gamma: (usize, f64),
}

/// Additive residuals for every parameter vector of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub objects: Vec<Vec<f64>>,
    pub layout: Vec<f64>,
    pub camera: Vec<f64>,
}

impl Residuals {
    pub fn zeros(codec: &ParamCodec, n_objects: usize) -> Self {
        Self {
            objects: vec![vec![0.0; codec.object_dim()]; n_objects],
            layout: vec![0.0; codec.layout_dim()],
            camera: vec![0.0; codec.camera_dim()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCodec {
    pub bins: BinSpecs,
    pub confidence: f64,
}

impl Default for ParamCodec {
    fn default() -> Self {
        Self {
            bins: BinSpecs::default(),
            confidence: BIN_CONFIDENCE,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl ParamCodec {
    pub fn object_slots(&self) -> ObjectSlots {
        let mut at = 0;
        ObjectSlots {
            delta: span(&mut at, 2),
            distance_logits: span(&mut at, self.bins.distance.count),
            distance_residuals: span(&mut at, self.bins.distance.count),
            size: span(&mut at, 3),
            yaw_logits: span(&mut at, self.bins.yaw.count),
            yaw_residuals: span(&mut at, self.bins.yaw.count),
        }
    }

    pub fn layout_slots(&self) -> LayoutSlots {
        let mut at = 0;
        LayoutSlots {
            center: span(&mut at, 3),
            size: span(&mut at, 3),
            yaw_logits: span(&mut at, self.bins.layout_yaw.count),
            yaw_residuals: span(&mut at, self.bins.layout_yaw.count),
        }
    }

    pub fn camera_slots(&self) -> CameraSlots {
        let mut at = 0;
        CameraSlots {
            pitch_logits: span(&mut at, self.bins.pitch.count),
            pitch_residuals: span(&mut at, self.bins.pitch.count),
            roll_logits: span(&mut at, self.bins.roll.count),
            roll_residuals: span(&mut at, self.bins.roll.count),
        }
    }

    pub fn object_dim(&self) -> usize {
        self.object_slots().yaw_residuals.end
    }

    pub fn layout_dim(&self) -> usize {
        self.layout_slots().yaw_residuals.end
    }

    pub fn camera_dim(&self) -> usize {
        self.camera_slots().roll_residuals.end
    }

    /// Per-bin logits and residuals of `x`.
    pub fn encode_binned(&self, spec: &BinSpec, x: f64) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
        let k = spec.index_of(x)?;
        let mut logits = vec![0.0; spec.count];
        logits[k] = self.confidence;
        Ok((logits, spec.residuals(x)?))
    }

    /// Bin index of `x` (the target class for classification).
    pub fn bin_of(&self, spec: &BinSpec, x: f64) -> Result<usize, GeometryError> {
        spec.index_of(x)
    }

    pub fn encode_object(&self, p: &ObjectBoxParam) -> Result<Vec<f64>, GeometryError> {
        let mut v = vec![0.0; self.object_dim()];
        let s = self.object_slots();
        let [w, h] = p.bbox_size();
        v[s.delta.start] = p.delta[0] / w;
        v[s.delta.start + 1] = p.delta[1] / h;
        let (l, r) = self.encode_binned(&self.bins.distance, p.distance)?;
        v[s.distance_logits].copy_from_slice(&l);
        v[s.distance_residuals].copy_from_slice(&r);
        v[s.size].copy_from_slice(&p.size);
        let (l, r) = self.encode_binned(&self.bins.yaw, p.yaw)?;
        v[s.yaw_logits].copy_from_slice(&l);
        v[s.yaw_residuals].copy_from_slice(&r);
        Ok(v)
    }

    pub fn encode_layout(&self, l: &LayoutBox) -> Result<Vec<f64>, GeometryError> {
        let mut v = vec![0.0; self.layout_dim()];
        let s = self.layout_slots();
        v[s.center].copy_from_slice(&l.center);
        v[s.size].copy_from_slice(&l.size);
        let (lg, r) = self.encode_binned(&self.bins.layout_yaw, l.yaw)?;
        v[s.yaw_logits].copy_from_slice(&lg);
        v[s.yaw_residuals].copy_from_slice(&r);
        Ok(v)
    }

    pub fn encode_camera(&self, c: &CameraPose) -> Result<Vec<f64>, GeometryError> {
        let mut v = vec![0.0; self.camera_dim()];
        let s = self.camera_slots();
        let (l, r) = self.encode_binned(&self.bins.pitch, c.beta)?;
        v[s.pitch_logits].copy_from_slice(&l);
        v[s.pitch_residuals].copy_from_slice(&r);
        let (l, r) = self.encode_binned(&self.bins.roll, c.gamma)?;
        v[s.roll_logits].copy_from_slice(&l);
        v[s.roll_residuals].copy_from_slice(&r);
        Ok(v)
    }

    /// Refined binned value: the winning bin of the updated logits decides
    /// which residual moves `x0`. A zero update returns `x0` unchanged.
    fn apply_binned(
        &self,
        spec: &BinSpec,
        x0: f64,
        d_logits: &[f64],
        d_res: &[f64],
        res_offset: usize,
    ) -> Result<(f64, (usize, f64)), GeometryError> {
        let k0 = spec.index_of(x0)?;
        let logits: Vec<f64> = (0..spec.count)
            .map(|j| if j == k0 { self.confidence } else { 0.0 } + d_logits[j])
            .collect();
        let k = argmax(&logits);
        let hw = spec.half_width();
        let mut x = x0 + d_res[k] * hw;
        if spec.wrap {
            x = wrap_angle(x);
        }
        Ok((x, (res_offset + k, hw)))
    }

    fn check_len(what: &str, v: &[f64], expected: usize) -> Result<(), SceneError> {
        if v.len() != expected {
            return Err(SceneError::Length {
                what: what.to_string(),
                expected,
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Refines object `index` (the index only labels errors).
    pub fn apply_object(
        &self,
        index: usize,
        p0: &ObjectBoxParam,
        residual: &[f64],
    ) -> Result<(ObjectBoxParam, ObjectParamJacobian), SceneError> {
        Self::check_len("object residual", residual, self.object_dim())?;
        let s = self.object_slots();
        let geo = |source| SceneError::Geometry { index, source };
        let [w, h] = p0.bbox_size();
        let mut p = *p0;
        p.delta[0] = p0.delta[0] + residual[s.delta.start] * w;
        p.delta[1] = p0.delta[1] + residual[s.delta.start + 1] * h;
        let (d, d_src) = self
            .apply_binned(
                &self.bins.distance,
                p0.distance,
                &residual[s.distance_logits.clone()],
                &residual[s.distance_residuals.clone()],
                s.distance_residuals.start,
            )
            .map_err(geo)?;
        let distance = if d < MIN_DISTANCE {
            p.distance = MIN_DISTANCE;
            None
        } else {
            p.distance = d;
            Some(d_src)
        };
        let mut size = [None; 3];
        for a in 0..3 {
            let v = p0.size[a] + residual[s.size.start + a];
            if v < MIN_SIZE {
                p.size[a] = MIN_SIZE;
            } else {
                p.size[a] = v;
                size[a] = Some(s.size.start + a);
            }
        }
        let (yaw, yaw_src) = self
            .apply_binned(
                &self.bins.yaw,
                p0.yaw,
                &residual[s.yaw_logits.clone()],
                &residual[s.yaw_residuals.clone()],
                s.yaw_residuals.start,
            )
            .map_err(geo)?;
        p.yaw = yaw;
        Ok((
            p,
            ObjectParamJacobian {
                delta: [(s.delta.start, w), (s.delta.start + 1, h)],
                distance,
                size,
                yaw: yaw_src,
            },
        ))
    }

    pub fn apply_layout(
        &self,
        l0: &LayoutBox,
        residual: &[f64],
    ) -> Result<(LayoutBox, LayoutParamJacobian), SceneError> {
        Self::check_len("layout residual", residual, self.layout_dim())?;
        let s = self.layout_slots();
        let mut l = *l0;
        let mut size = [None; 3];
        for a in 0..3 {
            l.center[a] = l0.center[a] + residual[s.center.start + a];
            let v = l0.size[a] + residual[s.size.start + a];
            if v < MIN_SIZE {
                l.size[a] = MIN_SIZE;
            } else {
                l.size[a] = v;
                size[a] = Some(s.size.start + a);
            }
        }
        let (yaw, yaw_src) = self
            .apply_binned(
                &self.bins.layout_yaw,
                l0.yaw,
                &residual[s.yaw_logits.clone()],
                &residual[s.yaw_residuals.clone()],
                s.yaw_residuals.start,
            )
            .map_err(SceneError::Layout)?;
        l.yaw = yaw;
        Ok((
            l,
            LayoutParamJacobian {
                center: [s.center.start, s.center.start + 1, s.center.start + 2],
                size,
                yaw: yaw_src,
            },
        ))
    }

    pub fn apply_camera(
        &self,
        c0: &CameraPose,
        residual: &[f64],
    ) -> Result<(CameraPose, CameraParamJacobian), SceneError> {
        Self::check_len("camera residual", residual, self.camera_dim())?;
        let s = self.camera_slots();
        let (beta, beta_src) = self
            .apply_binned(
                &self.bins.pitch,
                c0.beta,
                &residual[s.pitch_logits.clone()],
                &residual[s.pitch_residuals.clone()],
                s.pitch_residuals.start,
            )
            .map_err(SceneError::Camera)?;
        let (gamma, gamma_src) = self
            .apply_binned(
                &self.bins.roll,
                c0.gamma,
                &residual[s.roll_logits.clone()],
                &residual[s.roll_residuals.clone()],
                s.roll_residuals.start,
            )
            .map_err(SceneError::Camera)?;
        Ok((
            CameraPose { beta, gamma },
            CameraParamJacobian {
                beta: beta_src,
                gamma: gamma_src,
            },
        ))
    }
}

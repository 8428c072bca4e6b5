//! Structured local implicit shapes: a sum of scaled anisotropic Gaussian
//! elements, each modulated by a residual decoded from a per-element latent
//! code. Values are negative inside, zero on the surface.
//!
//! The first [`SYMMETRIC_COUNT`] elements are mirrored across the object
//! frame's `x = 0` plane: they contribute at both `x` and its reflection.

mod decoder;
mod field;
mod pose;

pub use decoder::{ElementDecoder, DECODER_HIDDEN, DECODER_INPUT, DEFAULT_DECODER_SEED};
pub use field::ShapeField;
pub use pose::{world_element_centers, ObjectPose};

use thiserror::Error;

use crate::geometry::{Mat3, Vec3};

pub const ELEMENT_COUNT: usize = 32;
pub const SYMMETRIC_COUNT: usize = 16;
pub const LATENT_DIM: usize = 32;
pub const ANALYTIC_DIM: usize = 10;
pub const CODE_WIDTH: usize = ANALYTIC_DIM + LATENT_DIM;
pub const CODE_LEN: usize = ELEMENT_COUNT * CODE_WIDTH;

pub const DEFAULT_ISO_LEVEL: f64 = -0.07;
/// Sigmoid sharpness used to turn field values into soft labels.
pub const DEFAULT_ALPHA: f64 = 100.0;

/// Smallest radius accepted by [`LdifShape::validate`].
pub const MIN_RADIUS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdifError {
    #[error("shape code must have length {expected}, got {actual}")]
    CodeLength { expected: usize, actual: usize },
    #[error("element {element}: {detail}")]
    InvalidElement { element: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianElement {
    /// Scale constant; non-positive so elements carve interior.
    pub c: f64,
    pub center: Vec3,
    pub radii: Vec3,
    /// Intrinsic Z-Y-X Euler angles.
    pub euler: Vec3,
}

impl GaussianElement {
    pub fn empty() -> Self {
        Self {
            c: 0.0,
            center: Vec3::zeros(),
            radii: Vec3::new(0.1, 0.1, 0.1),
            euler: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> Mat3 {
        euler_rotation(&self.euler)
    }
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_z_d(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn rot_y_d(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn rot_x_d(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// `Rz(e0) · Ry(e1) · Rx(e2)`.
pub fn euler_rotation(e: &Vec3) -> Mat3 {
    rot_z(e.x) * rot_y(e.y) * rot_x(e.z)
}

pub(crate) fn euler_rotation_derivatives(e: &Vec3) -> [Mat3; 3] {
    let (z, y, x) = (rot_z(e.x), rot_y(e.y), rot_x(e.z));
    [
        rot_z_d(e.x) * y * x,
        z * rot_y_d(e.y) * x,
        z * y * rot_x_d(e.z),
    ]
}

/// Reflection across the object-frame `x = 0` plane.
pub fn mirror(p: &Vec3) -> Vec3 {
    Vec3::new(-p.x, p.y, p.z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdifShape {
    pub elements: Vec<GaussianElement>,
    pub latents: Vec<[f64; LATENT_DIM]>,
    pub iso_level: f64,
}

impl Default for LdifShape {
    fn default() -> Self {
        Self::empty()
    }
}

impl LdifShape {
    /// All elements inactive (`c = 0`): the field equals `−iso_level`.
    pub fn empty() -> Self {
        Self {
            elements: vec![GaussianElement::empty(); ELEMENT_COUNT],
            latents: vec![[0.0; LATENT_DIM]; ELEMENT_COUNT],
            iso_level: DEFAULT_ISO_LEVEL,
        }
    }

    pub fn is_symmetric(index: usize) -> bool {
        index < SYMMETRIC_COUNT
    }

    /// Reads a flat code of 32 rows × 42 columns: `c`, center, radii, Euler
    /// angles, then the latent code. Values are not checked; see
    /// [`LdifShape::validate`].
    pub fn unpack(code: &[f64]) -> Result<Self, LdifError> {
        if code.len() != CODE_LEN {
            return Err(LdifError::CodeLength {
                expected: CODE_LEN,
                actual: code.len(),
            });
        }
        let mut shape = Self::empty();
        for (i, row) in code.chunks_exact(CODE_WIDTH).enumerate() {
            shape.elements[i] = GaussianElement {
                c: row[0],
                center: Vec3::new(row[1], row[2], row[3]),
                radii: Vec3::new(row[4], row[5], row[6]),
                euler: Vec3::new(row[7], row[8], row[9]),
            };
            shape.latents[i].copy_from_slice(&row[ANALYTIC_DIM..]);
        }
        Ok(shape)
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(CODE_LEN);
        for (e, z) in self.elements.iter().zip(&self.latents) {
            out.push(e.c);
            out.extend(e.center.iter());
            out.extend(e.radii.iter());
            out.extend(e.euler.iter());
            out.extend_from_slice(z);
        }
        out
    }

    pub fn validate(&self) -> Result<(), LdifError> {
        let bad = |element: usize, detail: &str| LdifError::InvalidElement {
            element,
            detail: detail.to_string(),
        };
        if self.elements.len() != ELEMENT_COUNT || self.latents.len() != ELEMENT_COUNT {
            return Err(LdifError::CodeLength {
                expected: CODE_LEN,
                actual: self.elements.len() * CODE_WIDTH,
            });
        }
        for (i, (e, z)) in self.elements.iter().zip(&self.latents).enumerate() {
            let finite = e.c.is_finite()
                && e.center.iter().all(|v| v.is_finite())
                && e.radii.iter().all(|v| v.is_finite())
                && e.euler.iter().all(|v| v.is_finite())
                && z.iter().all(|v| v.is_finite());
            if !finite {
                return Err(bad(i, "non-finite parameter"));
            }
            if e.c > 0.0 {
                return Err(bad(i, "scale constant must be non-positive"));
            }
            if e.radii.iter().any(|&r| r < MIN_RADIUS) {
                return Err(bad(i, "radii must be positive"));
            }
        }
        if !self.iso_level.is_finite() {
            return Err(bad(0, "non-finite iso level"));
        }
        Ok(())
    }

    /// Indices of elements with a nonzero scale constant.
    pub fn active_elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.c != 0.0)
            .map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unpack_splits_analytic_and_latent() {
        let code: Vec<f64> = (0..CODE_LEN).map(|i| i as f64).collect();
        let s = LdifShape::unpack(&code).unwrap();
        assert_eq!(s.elements.len(), 32);
        assert_eq!(s.elements[1].c, 42.0);
        assert_eq!(s.elements[1].euler.z, 51.0);
        assert_eq!(s.latents[1][0], 52.0);
        assert_eq!(s.latents[31][31], (CODE_LEN - 1) as f64);
        assert_eq!(s.pack(), code);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let err = LdifShape::unpack(&vec![0.0; 1343]).unwrap_err();
        assert_eq!(
            err,
            LdifError::CodeLength {
                expected: 1344,
                actual: 1343
            }
        );
        assert!(err.to_string().contains("1344"));
    }

    #[test]
    fn validation_flags_bad_elements() {
        let mut s = LdifShape::empty();
        assert!(s.validate().is_ok());
        s.elements[3].c = 0.5;
        assert!(matches!(
            s.validate(),
            Err(LdifError::InvalidElement { element: 3, .. })
        ));
        s.elements[3].c = -0.5;
        s.elements[3].radii.y = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn euler_derivatives_match_finite_differences() {
        let e = Vec3::new(0.3, -0.7, 1.1);
        let d = euler_rotation_derivatives(&e);
        let h = 1e-6;
        for k in 0..3 {
            let (mut a, mut b) = (e, e);
            a[k] += h;
            b[k] -= h;
            let num = (euler_rotation(&a) - euler_rotation(&b)) / (2.0 * h);
            assert!((num - d[k]).abs().max() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_is_bijective(code in proptest::collection::vec(-1e6f64..1e6, CODE_LEN)) {
            let s = LdifShape::unpack(&code).unwrap();
            prop_assert_eq!(s.pack(), code);
        }
    }
}

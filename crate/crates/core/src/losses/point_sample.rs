//! Shape supervision from labeled point samples.

use serde::{Deserialize, Serialize};

use super::{LossError, LossWeights};
use crate::geometry::Vec3;
use crate::ldif::{ShapeField, CODE_LEN, CODE_WIDTH};
use crate::tensor::sigmoid;

/// An object-frame point with its occupancy label: 0 inside, 1 outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub point: [f64; 3],
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointLoss {
    pub value: f64,
    /// Unweighted near-surface term.
    pub near: f64,
    /// Unweighted uniform term.
    pub uniform: f64,
    /// Unweighted element-center term.
    pub center: f64,
    /// Gradient with respect to the packed shape code.
    pub grad: Vec<f64>,
}

fn sample_term(field: &ShapeField, samples: &[PointSample], alpha: f64, weight: f64, grad: &mut [f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mut value = 0.0;
    for s in samples {
        let (f, g) = field.code_gradient(&Vec3::from(s.point));
        let p = sigmoid(alpha * f);
        let d = p - s.label;
        value += d * d / n;
        let scale = weight * 2.0 * d * alpha * p * (1.0 - p) / n;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += scale * v;
        }
    }
    value
}

/// Squared distance of each active element center outside `bounds`,
/// averaged over active elements.
fn center_term(field: &ShapeField, bounds: &(Vec3, Vec3), weight: f64, grad: &mut [f64]) -> f64 {
    let shape = field.shape();
    let active: Vec<usize> = shape.active_elements().collect();
    if active.is_empty() {
        return 0.0;
    }
    let n = active.len() as f64;
    let mut value = 0.0;
    for e in active {
        let c = shape.elements[e].center;
        for a in 0..3 {
            let d = if c[a] < bounds.0[a] {
                c[a] - bounds.0[a]
            } else if c[a] > bounds.1[a] {
                c[a] - bounds.1[a]
            } else {
                0.0
            };
            value += d * d / n;
            grad[e * CODE_WIDTH + 1 + a] += weight * 2.0 * d / n;
        }
    }
    value
}

/// Weighted sum of the near-surface, uniform and (when `bounds` is given)
/// element-center terms. Either sample set may be empty, but not both.
pub fn point_sample_loss(
    field: &ShapeField,
    near: &[PointSample],
    uniform: &[PointSample],
    weights: &LossWeights,
    bounds: Option<&(Vec3, Vec3)>,
) -> Result<PointLoss, LossError> {
    if near.is_empty() && uniform.is_empty() {
        return Err(LossError::EmptySamples("point"));
    }
    let mut grad = vec![0.0; CODE_LEN];
    let near_v = sample_term(field, near, weights.alpha, weights.near_surface, &mut grad);
    let uniform_v = sample_term(field, uniform, weights.alpha, weights.uniform, &mut grad);
    let center_v = match bounds {
        Some(b) => center_term(field, b, weights.center, &mut grad),
        None => 0.0,
    };
    Ok(PointLoss {
        value: weights.near_surface * near_v + weights.uniform * uniform_v + weights.center * center_v,
        near: near_v,
        uniform: uniform_v,
        center: center_v,
        grad,
    })
}

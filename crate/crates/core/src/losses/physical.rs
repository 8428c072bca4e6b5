//! Physical-violation loss: points inside one object that are also inside
//! one of its nearest neighbors are pushed out of that neighbor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LossError, LossWeights};
use crate::geometry::{yaw_matrix, yaw_matrix_derivative, Vec3};
use crate::ldif::{ElementDecoder, ObjectPose, ShapeField};
use crate::scene::SceneState;
use crate::tensor::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalConfig {
    /// Uniform candidates drawn from the object-frame cube per object.
    pub uniform_samples: usize,
    /// Also try every active element center as a candidate.
    pub include_centers: bool,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self {
            uniform_samples: 64,
            include_centers: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectSampleStats {
    pub candidates: usize,
    pub inside: usize,
}

impl ObjectSampleStats {
    /// No candidate landed inside the object, so it contributes nothing.
    pub fn is_empty(&self) -> bool {
        self.inside == 0
    }
}

/// Object-frame points inside each object's own surface. Membership does
/// not depend on the pose, so one draw serves any placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalSamples {
    pub points: Vec<Vec<Vec3>>,
    pub stats: Vec<ObjectSampleStats>,
}

pub fn sample_inside_points(fields: &[ShapeField], config: &PhysicalConfig, seed: u64) -> PhysicalSamples {
    let mut points = Vec::with_capacity(fields.len());
    let mut stats = Vec::with_capacity(fields.len());
    for (i, f) in fields.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut candidates: Vec<Vec3> = (0..config.uniform_samples)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                )
            })
            .collect();
        if config.include_centers {
            let shape = f.shape();
            candidates.extend(shape.active_elements().map(|e| shape.elements[e].center));
        }
        let inside: Vec<Vec3> = candidates.iter().copied().filter(|u| f.value(u) < 0.0).collect();
        stats.push(ObjectSampleStats {
            candidates: candidates.len(),
            inside: inside.len(),
        });
        points.push(inside);
    }
    PhysicalSamples { points, stats }
}

/// Loss value and its gradient with respect to every object pose
/// (translation, scale, yaw).
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalOutput {
    pub value: f64,
    pub pose_grads: Vec<[f64; 7]>,
    pub stats: Vec<ObjectSampleStats>,
    /// Point–neighbor pairs with a nonzero penalty.
    pub violations: usize,
}

/// The `k` objects whose centers are closest to object `i`'s center.
pub fn nearest_neighbors(poses: &[ObjectPose], i: usize, k: usize) -> Vec<usize> {
    let ti = poses[i].translation;
    let mut others: Vec<(f64, usize)> = (0..poses.len())
        .filter(|&j| j != i)
        .map(|j| ((poses[j].translation - ti).norm_squared(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.truncate(k);
    others.into_iter().map(|(_, j)| j).collect()
}

struct ObjectTerm {
    value: f64,
    grads: Vec<(usize, [f64; 7])>,
    violations: usize,
}

fn object_term(
    fields: &[ShapeField],
    poses: &[ObjectPose],
    points: &[Vec3],
    i: usize,
    alpha: f64,
    k: usize,
) -> ObjectTerm {
    let mut out = ObjectTerm {
        value: 0.0,
        grads: Vec::new(),
        violations: 0,
    };
    if points.is_empty() {
        return out;
    }
    let neighbors = nearest_neighbors(poses, i, k);
    let pi = &poses[i];
    let r = yaw_matrix(pi.yaw);
    let dr = yaw_matrix_derivative(pi.yaw);
    let norm = 1.0 / points.len() as f64;
    let mut gi = [0.0; 7];
    let mut gj = vec![[0.0; 7]; neighbors.len()];
    for u in points {
        let x = pi.to_world(u);
        let su = u.component_mul(&pi.scale);
        let d_yaw = dr * su;
        for (slot, &j) in neighbors.iter().enumerate() {
            let (f, g) = poses[j].pose_gradients(&fields[j], &x);
            let s = sigmoid(alpha * f);
            let gap = 0.5 - s;
            if gap <= 0.0 {
                continue;
            }
            out.violations += 1;
            out.value += gap * gap * norm;
            let dt_df = -2.0 * gap * alpha * s * (1.0 - s) * norm;
            for (a, v) in g.iter().enumerate() {
                gj[slot][a] += dt_df * v;
            }
            // the spatial gradient of f_j is minus its translation gradient
            let gx = -Vec3::new(g[0], g[1], g[2]) * dt_df;
            for a in 0..3 {
                gi[a] += gx[a];
                gi[3 + a] += gx.dot(&r.column(a)) * u[a];
            }
            gi[6] += gx.dot(&d_yaw);
        }
    }
    out.grads.push((i, gi));
    out.grads.extend(neighbors.into_iter().zip(gj));
    out
}

/// Physical-violation loss over fixed inside samples:
/// the mean over objects of the mean over that object's inside points of
/// `Σ_j relu(0.5 − sigmoid(α f_j(x)))²`, `j` ranging over the `k` nearest
/// other objects. Objects without inside samples contribute zero.
pub fn physical_violation(
    fields: &[ShapeField],
    poses: &[ObjectPose],
    samples: &PhysicalSamples,
    alpha: f64,
    k: usize,
) -> PhysicalOutput {
    let n = poses.len();
    let k = k.min(n.saturating_sub(1));
    let terms: Vec<ObjectTerm> = (0..n)
        .into_par_iter()
        .map(|i| object_term(fields, poses, &samples.points[i], i, alpha, k))
        .collect();
    let mut out = PhysicalOutput {
        value: 0.0,
        pose_grads: vec![[0.0; 7]; n],
        stats: samples.stats.clone(),
        violations: 0,
    };
    if n == 0 {
        return out;
    }
    let inv_n = 1.0 / n as f64;
    for t in terms {
        out.value += t.value * inv_n;
        out.violations += t.violations;
        for (j, g) in t.grads {
            for a in 0..7 {
                out.pose_grads[j][a] += g[a] * inv_n;
            }
        }
    }
    out
}

/// Branch pattern of [`physical_violation`]: neighbor sets, active
/// penalties and the field branches they read. Equal patterns mean the
/// loss is smooth between two configurations.
pub fn physical_signature(
    fields: &[ShapeField],
    poses: &[ObjectPose],
    samples: &PhysicalSamples,
    alpha: f64,
    k: usize,
) -> Vec<i8> {
    let n = poses.len();
    let k = k.min(n.saturating_sub(1));
    let mut sig = Vec::new();
    for i in 0..n {
        let neighbors = nearest_neighbors(poses, i, k);
        sig.extend(neighbors.iter().map(|&j| j as i8));
        for u in &samples.points[i] {
            let x = poses[i].to_world(u);
            for &j in &neighbors {
                let f = poses[j].world_value(&fields[j], &x);
                let active = 0.5 - sigmoid(alpha * f) > 0.0;
                sig.push(active as i8);
                if active {
                    sig.extend(poses[j].branch_signature(&fields[j], &x));
                }
            }
        }
    }
    sig
}

/// Physical-violation loss of a scene's current placement.
pub fn physical_violation_loss(
    state: &SceneState,
    decoder: &ElementDecoder,
    weights: &LossWeights,
    config: &PhysicalConfig,
    seed: u64,
) -> Result<PhysicalOutput, LossError> {
    let fields = state.fields(decoder)?;
    let poses = state.poses()?;
    let samples = sample_inside_points(&fields, config, seed);
    Ok(physical_violation(&fields, &poses, &samples, weights.alpha, weights.k))
}

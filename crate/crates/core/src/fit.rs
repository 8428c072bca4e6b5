//! Fitting a shape code to a signed distance function with the point-sample
//! loss and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::ldif::{ElementDecoder, LdifShape, ShapeField, CODE_WIDTH, ELEMENT_COUNT, SYMMETRIC_COUNT};
use crate::losses::{point_sample_loss, LossError, LossWeights, PointSample};
use crate::mesher::{chamfer_points, extract_shape, sample_surface, GridSpec, MeshError};
use crate::optim::{Adam, AdamConfig};

/// A solid described by its signed distance, negative inside.
pub trait SdfTarget: Sync {
    fn distance(&self, p: &Vec3) -> f64;
    /// A point drawn from the boundary surface.
    fn surface_point(&self, rng: &mut ChaCha8Rng) -> Vec3;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

impl SdfTarget for Sphere {
    fn distance(&self, p: &Vec3) -> f64 {
        (p - Vec3::from(self.center)).norm() - self.radius
    }

    fn surface_point(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let d = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
            let n = d.norm();
            if n > 1e-12 {
                return Vec3::from(self.center) + d * (self.radius / n);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub near_samples: usize,
    pub uniform_samples: usize,
    /// Standard deviation of the offsets applied to surface points.
    pub near_sigma: f64,
    /// Uniform samples and element centers live in `[-extent, extent]³`.
    pub extent: f64,
    /// Elements switched on in the initial shape, spread over both the
    /// mirrored and the free slots.
    pub initial_elements: usize,
    pub initial_radius: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.01,
            near_samples: 1024,
            uniform_samples: 1024,
            near_sigma: 0.02,
            extent: 1.0,
            initial_elements: 8,
            initial_radius: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitLogEntry {
    pub step: usize,
    pub loss: f64,
    /// Lowest loss seen up to and including this step.
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Shape with the lowest loss seen.
    pub shape: LdifShape,
    pub initial_shape: LdifShape,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub log: Vec<FitLogEntry>,
}

/// Radii are kept at least this large during optimization.
const MIN_FIT_RADIUS: f64 = 0.01;

fn labeled(target: &dyn SdfTarget, p: Vec3) -> PointSample {
    PointSample {
        point: p.into(),
        label: if target.distance(&p) < 0.0 { 0.0 } else { 1.0 },
    }
}

/// Near-surface and uniform samples with exact occupancy labels.
pub fn sample_target(target: &dyn SdfTarget, config: &FitConfig, rng: &mut ChaCha8Rng) -> (Vec<PointSample>, Vec<PointSample>) {
    let jitter = Normal::new(0.0, config.near_sigma).expect("finite sigma");
    let near = (0..config.near_samples)
        .map(|_| {
            let s = target.surface_point(rng);
            labeled(target, s + Vec3::from_fn(|_, _| jitter.sample(rng)))
        })
        .collect();
    let e = config.extent;
    let uniform = (0..config.uniform_samples)
        .map(|_| labeled(target, Vec3::from_fn(|_, _| rng.random_range(-e..e))))
        .collect();
    (near, uniform)
}

/// A few small Gaussians near the origin; mirrored slots stay at `x ≥ 0`.
pub fn initial_shape(config: &FitConfig, rng: &mut ChaCha8Rng) -> LdifShape {
    let mut shape = LdifShape::empty();
    let half = config.initial_elements.div_ceil(2).min(SYMMETRIC_COUNT);
    let free = (config.initial_elements - half).min(ELEMENT_COUNT - SYMMETRIC_COUNT);
    let slots = (0..half).chain(SYMMETRIC_COUNT..SYMMETRIC_COUNT + free);
    let spread = 0.3 * config.extent;
    for i in slots {
        let e = &mut shape.elements[i];
        e.c = -1.0;
        e.center = Vec3::from_fn(|_, _| rng.random_range(-spread..spread));
        if LdifShape::is_symmetric(i) {
            e.center.x = e.center.x.abs();
        }
        e.radii = Vec3::repeat(config.initial_radius);
    }
    shape
}

fn project(code: &mut [f64]) {
    for row in code.chunks_exact_mut(CODE_WIDTH) {
        row[0] = row[0].min(0.0);
        for r in &mut row[4..7] {
            *r = r.max(MIN_FIT_RADIUS);
        }
    }
}

/// Minimizes the point-sample loss of a shape code against `target` with
/// the decoder held fixed. Inactive elements stay inactive.
pub fn fit_shape(target: &dyn SdfTarget, decoder: &ElementDecoder, config: &FitConfig) -> Result<FitResult, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (near, uniform) = sample_target(target, config, &mut rng);
    let initial_shape = initial_shape(config, &mut rng);
    let weights = LossWeights::default();
    let bounds = (Vec3::repeat(-config.extent), Vec3::repeat(config.extent));
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    let mut code = initial_shape.pack();
    let mut best = (f64::INFINITY, initial_shape.clone());
    let mut initial_loss = f64::NAN;
    let mut log = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let shape = LdifShape::unpack(&code).expect("packed code length");
        let field = ShapeField::new(&shape, decoder);
        let loss = point_sample_loss(&field, &near, &uniform, &weights, Some(&bounds))?;
        if step == 0 {
            initial_loss = loss.value;
        }
        if loss.value < best.0 {
            best = (loss.value, shape);
        }
        log.push(FitLogEntry {
            step,
            loss: loss.value,
            best: best.0,
        });
        if step == config.steps {
            break;
        }
        adam.step("shape", &mut code, &loss.grad);
        // keep switched-off elements switched off
        for (i, row) in code.chunks_exact_mut(CODE_WIDTH).enumerate() {
            if initial_shape.elements[i].c == 0.0 {
                row[0] = 0.0;
            }
        }
        project(&mut code);
    }
    Ok(FitResult {
        shape: best.1,
        initial_shape,
        initial_loss,
        best_loss: best.0,
        log,
    })
}

/// Chamfer distance, after ICP alignment, between the extracted surface of
/// `shape` and the target's own surface. Both sides get `samples` points;
/// the mesh is extracted over `[-extent, extent]³`.
pub fn chamfer_to_target(
    shape: &LdifShape,
    decoder: &ElementDecoder,
    target: &dyn SdfTarget,
    resolution: usize,
    extent: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, MeshError> {
    let grid = GridSpec {
        min: Vec3::repeat(-extent),
        max: Vec3::repeat(extent),
        resolution: [resolution; 3],
    };
    let mesh = extract_shape(&ShapeField::new(shape, decoder), &grid)?;
    let pred = sample_surface(&mesh, samples, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a3f);
    let gt: Vec<Vec3> = (0..samples).map(|_| target.surface_point(&mut rng)).collect();
    Ok(chamfer_points(&pred, &gt, true)?.distance)
}

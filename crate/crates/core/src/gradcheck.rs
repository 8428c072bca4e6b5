//! Finite-difference suites for the hand-written gradients: field value
//! wrt pose, physical violation wrt translations, and the joint loss wrt
//! message-passing and head weights.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::graph::{FeatureDims, GraphError, Network, SgcnConfig, SgcnWeights};
use crate::io::{gen_synthetic, SynthConfig};
use crate::ldif::{ElementDecoder, GaussianElement, LdifShape, ObjectPose, ShapeField};
use crate::losses::{
    joint_loss, joint_signature, physical_signature, physical_violation, sample_inside_points, JointInputs,
    LossError, LossWeights, PhysicalConfig, ProjectedBoundsLoss,
};
use crate::scene::{ParamCodec, Scene};
use crate::tensor::{central_differences, compare_gradients_with_floor, roundoff_floor, FdReport};

pub const POSE_TOLERANCE: f64 = 1e-4;
pub const PHYSICAL_TOLERANCE: f64 = 1e-3;
pub const JOINT_TOLERANCE: f64 = 1e-3;
/// Sigmoid sharpness used by the loss suites; the training value makes
/// central differences ill-conditioned near the surface.
pub const CHECK_ALPHA: f64 = 5.0;

const POSE_STEP: f64 = 1e-6;
const PHYSICAL_STEP: f64 = 1e-6;
const JOINT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub configs: usize,
    pub tolerance: f64,
    pub checked: usize,
    /// Probes that straddled a kink and were left out.
    pub skipped: usize,
    /// Largest relative error; differences within the rounding error of
    /// the central difference are scaled to at most the tolerance.
    pub max_error: f64,
    /// Configurations with at least one component over tolerance.
    pub failed_configs: Vec<usize>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            configs: 0,
            tolerance,
            checked: 0,
            skipped: 0,
            max_error: 0.0,
            failed_configs: Vec::new(),
            passed: true,
        }
    }

    fn add(&mut self, config: usize, r: &FdReport) {
        self.checked += r.checked;
        self.skipped += r.skipped.len();
        self.max_error = self.max_error.max(r.max_error);
        if !r.passed {
            if self.failed_configs.last() != Some(&config) {
                self.failed_configs.push(config);
            }
            self.passed = false;
        }
    }
}

fn random_element(rng: &mut ChaCha8Rng, radii: (f64, f64)) -> GaussianElement {
    GaussianElement {
        c: rng.random_range(-1.5..-0.2),
        center: Vec3::from_fn(|_, _| rng.random_range(-0.4..0.4)),
        radii: Vec3::from_fn(|_, _| rng.random_range(radii.0..radii.1)),
        euler: Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)),
    }
}

fn random_shape(rng: &mut ChaCha8Rng, radii: (f64, f64)) -> LdifShape {
    let mut s = LdifShape::empty();
    for _ in 0..rng.random_range(1..4) {
        let i = rng.random_range(0..32);
        s.elements[i] = random_element(rng, radii);
    }
    s
}

fn pose_vec(p: &ObjectPose) -> Vec<f64> {
    vec![
        p.translation.x,
        p.translation.y,
        p.translation.z,
        p.scale.x,
        p.scale.y,
        p.scale.z,
        p.yaw,
    ]
}

fn pose_from(v: &[f64]) -> ObjectPose {
    ObjectPose {
        translation: Vec3::new(v[0], v[1], v[2]),
        scale: Vec3::new(v[3], v[4], v[5]),
        yaw: v[6],
    }
}

/// Field value at a world point wrt the seven pose scalars.
pub fn ldif_pose_suite(configs: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("ldif_pose", POSE_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decoder = ElementDecoder::seeded(seed ^ 0x1d1f);
    for c in 0..configs {
        let f = ShapeField::new(&random_shape(&mut rng, (0.2, 0.6)), &decoder);
        let pose = ObjectPose {
            translation: Vec3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
            ),
            scale: Vec3::from_fn(|_, _| rng.random_range(0.2..1.5)),
            yaw: rng.random_range(-PI..PI),
        };
        let x = pose.to_world(&Vec3::from_fn(|_, _| rng.random_range(-0.8..0.8)));
        let (value, g) = pose.pose_gradients(&f, &x);
        let (num, skipped) = central_differences(
            |v| {
                let p = pose_from(v);
                (p.world_value(&f, &x), p.branch_signature(&f, &x))
            },
            &pose_vec(&pose),
            POSE_STEP,
        );
        let floor = roundoff_floor(value, POSE_STEP);
        report.add(c, &compare_gradients_with_floor(&g, &num, &skipped, POSE_TOLERANCE, floor));
        report.configs += 1;
    }
    report
}

/// Physical violation of 2–4 overlapping objects wrt every translation.
pub fn physical_suite(configs: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("physical_translation", PHYSICAL_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decoder = ElementDecoder::seeded(seed ^ 0x9a7);
    for c in 0..configs {
        let n = rng.random_range(2..=4);
        let fields: Vec<ShapeField> = (0..n)
            .map(|_| ShapeField::new(&random_shape(&mut rng, (0.3, 0.5)), &decoder))
            .collect();
        let poses: Vec<ObjectPose> = (0..n)
            .map(|_| ObjectPose {
                translation: Vec3::new(
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.4..0.4),
                ),
                scale: Vec3::from_fn(|_, _| rng.random_range(0.3..0.7)),
                yaw: rng.random_range(-3.0..3.0),
            })
            .collect();
        let k = rng.random_range(1..n);
        let samples = sample_inside_points(&fields, &PhysicalConfig::default(), seed ^ c as u64);
        let out = physical_violation(&fields, &poses, &samples, CHECK_ALPHA, k);
        let analytic: Vec<f64> = out.pose_grads.iter().flat_map(|g| g[..3].to_vec()).collect();
        let at = |v: &[f64]| -> Vec<ObjectPose> {
            poses
                .iter()
                .zip(v.chunks_exact(3))
                .map(|(p, t)| ObjectPose {
                    translation: Vec3::new(t[0], t[1], t[2]),
                    ..*p
                })
                .collect()
        };
        let base: Vec<f64> = poses.iter().flat_map(|p| p.translation.iter().copied().collect::<Vec<_>>()).collect();
        let (num, skipped) = central_differences(
            |v| {
                let p = at(v);
                (
                    physical_violation(&fields, &p, &samples, CHECK_ALPHA, k).value,
                    physical_signature(&fields, &p, &samples, CHECK_ALPHA, k),
                )
            },
            &base,
            PHYSICAL_STEP,
        );
        let floor = roundoff_floor(out.value, PHYSICAL_STEP);
        report.add(c, &compare_gradients_with_floor(&analytic, &num, &skipped, PHYSICAL_TOLERANCE, floor));
        report.configs += 1;
    }
    report
}

/// Joint loss wrt every message-passing and decoding-head weight of a
/// narrow network. Each configuration draws fresh weights; without a
/// `scene` each also draws a fresh synthetic scene.
pub fn joint_suite(
    configs: usize,
    seed: u64,
    scene: Option<(&Scene, &ElementDecoder)>,
) -> Result<SuiteReport, GraphError> {
    let mut report = SuiteReport::new("joint_weights", JOINT_TOLERANCE);
    let loss = LossWeights {
        alpha: CHECK_ALPHA,
        ..LossWeights::default()
    };
    let physical = PhysicalConfig::default();
    let default_decoder = ElementDecoder::seeded(crate::ldif::DEFAULT_DECODER_SEED);
    for c in 0..configs {
        let owned;
        let (scene, decoder) = match scene {
            Some(s) => s,
            None => {
                let data = gen_synthetic(&SynthConfig {
                    seed: seed.wrapping_add(c as u64),
                    scenes: 1,
                    test_fraction: 0.0,
                    objects: (1, 3),
                    ..SynthConfig::default()
                })
                .expect("fixed synthetic config is valid");
                owned = data.scenes(None).remove(0);
                (&owned, &default_decoder)
            }
        };
        let gt = scene.ground_truth.as_ref().ok_or(LossError::MissingGroundTruth)?;
        let mut config = SgcnConfig::new(FeatureDims::from_scenes([scene])?);
        config.d = 6;
        config.head_hidden = 6;
        let net = Network::new(config, ParamCodec::default());
        let mut w = SgcnWeights::init(&net.config, &net.codec, seed ^ (c as u64) << 8);
        w.randomize_heads(seed.wrapping_add(c as u64), 0.05);
        let fields = scene.estimate.fields(decoder)?;
        let inputs = JointInputs {
            codec: &net.codec,
            weights: &loss,
            physical: &physical,
            cooperative: &ProjectedBoundsLoss,
            initial: &scene.estimate,
            ground_truth: gt,
            fields: &fields,
            seed: seed ^ c as u64,
        };
        let (grads, value) = net.backprop(&w, &scene.estimate, None, |out| {
            let j = joint_loss(&inputs, &out.residuals)?;
            Ok((j.grads, j.report.total))
        })?;
        let floor = roundoff_floor(value, JOINT_STEP);
        for (name, t) in &w.tensors {
            if !(name.starts_with("msg_") || name.starts_with("head_")) {
                continue;
            }
            let analytic = grads.get(name).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]);
            let mut failure = None;
            let (num, skipped) = central_differences(
                |x| {
                    let mut probe = w.clone();
                    probe.tensors.get_mut(name).expect("tensor exists").data_mut().copy_from_slice(x);
                    let eval = || -> Result<(f64, Vec<i8>), GraphError> {
                        let r = net.forward(&probe, &scene.estimate)?.residuals;
                        let mut sig = net.relu_pattern(&probe, &scene.estimate)?;
                        sig.extend(joint_signature(&inputs, &r)?);
                        Ok((joint_loss(&inputs, &r)?.report.total, sig))
                    };
                    eval().unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        (0.0, Vec::new())
                    })
                },
                t.data(),
                JOINT_STEP,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            report.add(c, &compare_gradients_with_floor(&analytic, &num, &skipped, JOINT_TOLERANCE, floor));
        }
        report.configs += 1;
    }
    Ok(report)
}

/// All three suites with `configs` configurations each.
pub fn run_all(
    configs: usize,
    seed: u64,
    scene: Option<(&Scene, &ElementDecoder)>,
) -> Result<Vec<SuiteReport>, GraphError> {
    Ok(vec![
        ldif_pose_suite(configs, seed),
        physical_suite(configs, seed),
        joint_suite(configs, seed, scene)?,
    ])
}

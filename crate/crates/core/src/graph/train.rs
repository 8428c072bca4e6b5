//! Mini-batch training of the refinement network against the joint loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphError, Network, SgcnWeights};
use crate::ldif::{ElementDecoder, ShapeField};
use crate::losses::{
    joint_loss, CooperativeLoss, JointInputs, LossError, LossReport, LossWeights, PhysicalConfig,
};
use crate::optim::{Adam, AdamConfig};
use crate::scene::{Scene, SceneState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Learning-rate multiplier applied after every step.
    pub lr_decay: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub physical: PhysicalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 2,
            adam: AdamConfig::default(),
            lr_decay: 1.0,
            seed: 0,
            loss: LossWeights::default(),
            physical: PhysicalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Batch mean of the loss terms before the update.
    pub loss: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: SgcnWeights,
    pub curve: Vec<StepRecord>,
}

struct Prepared<'a> {
    estimate: &'a SceneState,
    ground_truth: &'a SceneState,
    fields: Vec<ShapeField>,
}

/// Joint loss and residual gradients of one scene under `weights`.
fn scene_gradients(
    network: &Network,
    weights: &SgcnWeights,
    p: &Prepared,
    config: &TrainConfig,
    cooperative: &dyn CooperativeLoss,
    seed: u64,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(crate::tensor::Gradients, LossReport), GraphError> {
    network.backprop(weights, p.estimate, dropout_rng, |out| {
        let inputs = JointInputs {
            codec: &network.codec,
            weights: &config.loss,
            physical: &config.physical,
            cooperative,
            initial: p.estimate,
            ground_truth: p.ground_truth,
            fields: &p.fields,
            seed,
        };
        let j = joint_loss(&inputs, &out.residuals)?;
        Ok((j.grads, j.report))
    })
}

/// Trains `weights` with Adam. Deterministic for a given configuration.
/// A non-finite loss or gradient stops training and returns the weights
/// from before the failing step inside the error.
pub fn train_sgcn(
    network: &Network,
    weights: SgcnWeights,
    dataset: &[Scene],
    decoder: &ElementDecoder,
    cooperative: &dyn CooperativeLoss,
    config: &TrainConfig,
) -> Result<TrainOutcome, GraphError> {
    if dataset.is_empty() {
        return Err(GraphError::NoTrainingData);
    }
    let prepared: Vec<Prepared> = dataset
        .iter()
        .map(|s| {
            let gt = s.ground_truth.as_ref().ok_or(LossError::MissingGroundTruth)?;
            Ok(Prepared {
                estimate: &s.estimate,
                ground_truth: gt,
                fields: s.estimate.fields(decoder)?,
            })
        })
        .collect::<Result<_, GraphError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d20f);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(config.adam);
    let mut lr = config.adam.lr;
    let mut weights = weights;
    let mut curve = Vec::with_capacity(config.steps);
    let batch = config.batch.max(1);

    for step in 0..config.steps {
        let mut picks = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let mut sum: Option<crate::tensor::Gradients> = None;
        let mut reports = Vec::with_capacity(batch);
        for (slot, &i) in picks.iter().enumerate() {
            let seed = config.seed ^ ((step as u64) << 16) ^ slot as u64;
            let use_dropout = network.config.dropout > 0.0;
            let (g, report) = scene_gradients(
                network,
                &weights,
                &prepared[i],
                config,
                cooperative,
                seed,
                use_dropout.then_some(&mut dropout_rng),
            )?;
            reports.push(report);
            sum = Some(match sum {
                None => g,
                Some(mut acc) => {
                    for name in weights.tensors.keys() {
                        if let (Some(a), Some(b)) = (acc.get_mut(name), g.get(name)) {
                            a.add_assign(b);
                        }
                    }
                    acc
                }
            });
        }
        let loss = LossReport::mean(&reports);
        let grads = sum.expect("batch is nonempty");
        let finite = loss.total.is_finite()
            && weights
                .tensors
                .keys()
                .all(|n| grads.get(n).is_none_or(|g| g.data().iter().all(|v| v.is_finite())));
        if !finite {
            return Err(GraphError::NonFiniteLoss {
                step,
                last_good: Box::new(weights),
            });
        }
        curve.push(StepRecord { step, lr, loss });
        let scale = 1.0 / batch as f64;
        for (name, w) in weights.tensors.iter_mut() {
            if let Some(g) = grads.get(name) {
                let g: Vec<f64> = g.data().iter().map(|v| v * scale).collect();
                adam.step_with_lr(name, w.data_mut(), &g, lr);
            }
        }
        lr *= config.lr_decay;
    }
    Ok(TrainOutcome { weights, curve })
}

/// Mean joint loss of `weights` over a dataset (no dropout).
pub fn evaluate_loss(
    network: &Network,
    weights: &SgcnWeights,
    dataset: &[Scene],
    decoder: &ElementDecoder,
    cooperative: &dyn CooperativeLoss,
    config: &TrainConfig,
) -> Result<LossReport, GraphError> {
    let mut reports = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.iter().enumerate() {
        let gt = s.ground_truth.as_ref().ok_or(LossError::MissingGroundTruth)?;
        let fields = s.estimate.fields(decoder)?;
        let out = network.forward(weights, &s.estimate)?;
        let inputs = JointInputs {
            codec: &network.codec,
            weights: &config.loss,
            physical: &config.physical,
            cooperative,
            initial: &s.estimate,
            ground_truth: gt,
            fields: &fields,
            seed: config.seed ^ i as u64,
        };
        reports.push(joint_loss(&inputs, &out.residuals)?.report);
    }
    Ok(LossReport::mean(&reports))
}

/// The estimate refined by the network's residuals.
pub fn refine(network: &Network, weights: &SgcnWeights, scene: &SceneState) -> Result<SceneState, GraphError> {
    let out = network.forward(weights, scene)?;
    Ok(network.codec.apply_residuals(scene, &out.residuals)?.0)
}

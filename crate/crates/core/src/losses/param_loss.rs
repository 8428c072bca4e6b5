//! Supervised losses on the flat parameter vectors: cross-entropy style
//! classification of bins plus squared regression of the residuals and of
//! the unbinned entries.

use super::{LossError, LossWeights};
use crate::geometry::{forward_project, BinSpec, CameraPose, LayoutBox, ObjectBoxParam};
use crate::scene::{ParamCodec, SceneError, SceneState};

/// A loss value with its gradient with respect to the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Bin classification loss: KL divergence from the encoded target
/// distribution `softmax(confidence · onehot(target))` to `softmax(logits)`.
/// Zero exactly when the logits equal the target encoding up to a constant.
pub fn binned_cls(logits: &[f64], target: usize, confidence: f64) -> (f64, Vec<f64>) {
    let t: Vec<f64> = (0..logits.len())
        .map(|j| if j == target { confidence } else { 0.0 })
        .collect();
    let q = softmax(&t);
    let log_q = log_softmax(&t);
    let log_p = log_softmax(logits);
    let p = softmax(logits);
    let value = q
        .iter()
        .zip(log_q.iter().zip(&log_p))
        .map(|(qi, (lq, lp))| qi * (lq - lp))
        .sum::<f64>()
        .max(0.0);
    let grad = p.iter().zip(&q).map(|(pi, qi)| pi - qi).collect();
    (value, grad)
}

/// Mean squared residual error over all bins, in half-bin units. For
/// periodic specs the difference is wrapped so that residuals encoding the
/// same angle compare equal.
pub fn binned_reg(pred: &[f64], target: &[f64], spec: &BinSpec) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let hw = spec.half_width();
    let period = spec.hi - spec.lo;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (j, (p, t)) in pred.iter().zip(target).enumerate() {
        let mut d = (p - t) * hw;
        if spec.wrap {
            d -= period * ((d + 0.5 * period) / period).floor();
        }
        let d = d / hw;
        value += d * d / n;
        grad[j] = 2.0 * d / n;
    }
    (value, grad)
}

fn add_binned(
    codec: &ParamCodec,
    spec: &BinSpec,
    pred: &[f64],
    logits: std::ops::Range<usize>,
    residuals: std::ops::Range<usize>,
    target: f64,
    weight: f64,
    reg_weight: f64,
    grad: &mut [f64],
) -> Result<f64, LossError> {
    let k = codec.bin_of(spec, target)?;
    let (cls, gc) = binned_cls(&pred[logits.clone()], k, codec.confidence);
    let (reg, gr) = binned_reg(&pred[residuals.clone()], &spec.residuals(target)?, spec);
    for (g, v) in grad[logits].iter_mut().zip(gc) {
        *g += weight * v;
    }
    for (g, v) in grad[residuals].iter_mut().zip(gr) {
        *g += weight * reg_weight * v;
    }
    Ok(weight * (cls + reg_weight * reg))
}

fn add_squared(pred: &[f64], target: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
    let mut v = 0.0;
    for ((p, t), g) in pred.iter().zip(target).zip(grad.iter_mut()) {
        let d = p - t;
        v += d * d;
        *g += 2.0 * weight * d;
    }
    weight * v
}

fn check_len(what: &str, v: &[f64], expected: usize) -> Result<(), LossError> {
    if v.len() != expected {
        return Err(SceneError::Length {
            what: what.into(),
            expected,
            actual: v.len(),
        }
        .into());
    }
    Ok(())
}

/// Object loss: offset, binned distance, size and binned yaw. The offset
/// target is normalized by the target's detection box.
pub fn object_loss(
    codec: &ParamCodec,
    w: &LossWeights,
    pred: &[f64],
    target: &ObjectBoxParam,
) -> Result<ParamLoss, LossError> {
    check_len("object vector", pred, codec.object_dim())?;
    let s = codec.object_slots();
    let mut grad = vec![0.0; pred.len()];
    let [bw, bh] = target.bbox_size();
    let mut value = add_squared(
        &pred[s.delta.clone()],
        &[target.delta[0] / bw, target.delta[1] / bh],
        w.offset,
        &mut grad[s.delta.clone()],
    );
    value += add_binned(
        codec,
        &codec.bins.distance,
        pred,
        s.distance_logits,
        s.distance_residuals,
        target.distance,
        w.distance,
        w.distance_reg,
        &mut grad,
    )?;
    value += add_squared(&pred[s.size.clone()], &target.size, w.size, &mut grad[s.size]);
    value += add_binned(
        codec,
        &codec.bins.yaw,
        pred,
        s.yaw_logits,
        s.yaw_residuals,
        target.yaw,
        w.yaw,
        w.yaw_reg,
        &mut grad,
    )?;
    Ok(ParamLoss { value, grad })
}

pub fn layout_loss(
    codec: &ParamCodec,
    w: &LossWeights,
    pred: &[f64],
    target: &LayoutBox,
) -> Result<ParamLoss, LossError> {
    check_len("layout vector", pred, codec.layout_dim())?;
    let s = codec.layout_slots();
    let mut grad = vec![0.0; pred.len()];
    let mut value = add_squared(
        &pred[s.center.clone()],
        &target.center,
        w.layout_center,
        &mut grad[s.center],
    );
    value += add_squared(&pred[s.size.clone()], &target.size, w.layout_size, &mut grad[s.size]);
    value += add_binned(
        codec,
        &codec.bins.layout_yaw,
        pred,
        s.yaw_logits,
        s.yaw_residuals,
        target.yaw,
        w.layout_yaw,
        w.layout_yaw_reg,
        &mut grad,
    )?;
    Ok(ParamLoss { value, grad })
}

pub fn camera_loss(
    codec: &ParamCodec,
    w: &LossWeights,
    pred: &[f64],
    target: &CameraPose,
) -> Result<ParamLoss, LossError> {
    check_len("camera vector", pred, codec.camera_dim())?;
    let s = codec.camera_slots();
    let mut grad = vec![0.0; pred.len()];
    let mut value = add_binned(
        codec,
        &codec.bins.pitch,
        pred,
        s.pitch_logits,
        s.pitch_residuals,
        target.beta,
        w.pitch,
        w.pitch_reg,
        &mut grad,
    )?;
    value += add_binned(
        codec,
        &codec.bins.roll,
        pred,
        s.roll_logits,
        s.roll_residuals,
        target.gamma,
        w.roll,
        w.roll_reg,
        &mut grad,
    )?;
    Ok(ParamLoss { value, grad })
}

/// Ground-truth object `i` re-expressed against the estimate's detection
/// box, so both vectors share one normalization.
pub(crate) fn aligned_target(
    pred: &SceneState,
    gt: &SceneState,
    i: usize,
) -> Result<ObjectBoxParam, LossError> {
    let center = gt.world_box(i)?.center;
    let bbox2d = pred.objects[i].param.bbox2d;
    let (delta, distance) = forward_project(&center, &bbox2d, &gt.camera, &gt.intrinsics)
        .map_err(|source| SceneError::Geometry { index: i, source })?;
    Ok(ObjectBoxParam {
        delta,
        distance,
        bbox2d,
        ..gt.objects[i].param
    })
}

/// Layout-and-camera loss and object loss (averaged over objects) of a
/// predicted scene against its ground truth. Objects correspond by index.
pub fn len_odn_loss(
    codec: &ParamCodec,
    w: &LossWeights,
    pred: &SceneState,
    gt: &SceneState,
) -> Result<(f64, f64), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::Correspondence {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let len = layout_loss(codec, w, &codec.encode_layout(&pred.layout).map_err(SceneError::Layout)?, &gt.layout)?
        .value
        + camera_loss(codec, w, &codec.encode_camera(&pred.camera).map_err(SceneError::Camera)?, &gt.camera)?.value;
    let mut odn = 0.0;
    for i in 0..pred.len() {
        let v = codec
            .encode_object(&pred.objects[i].param)
            .map_err(|source| SceneError::Geometry { index: i, source })?;
        odn += object_loss(codec, w, &v, &aligned_target(pred, gt, i)?)?.value;
    }
    if !pred.is_empty() {
        odn /= pred.len() as f64;
    }
    Ok((len, odn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::BIN_CONFIDENCE;
    use crate::tensor::{central_differences, compare_gradients};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn target() -> ObjectBoxParam {
        ObjectBoxParam {
            delta: [4.0, -3.0],
            distance: 5.1,
            size: [0.9, 0.7, 1.6],
            yaw: 2.9,
            bbox2d: [100.0, 80.0, 220.0, 260.0],
            category: 0,
        }
    }

    #[test]
    fn matching_encoding_has_zero_loss() {
        let c = ParamCodec::default();
        let w = LossWeights::default();
        let t = target();
        let v = c.encode_object(&t).unwrap();
        let l = object_loss(&c, &w, &v, &t).unwrap();
        assert!(l.value.abs() < 1e-12, "{}", l.value);
        assert!(l.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn cls_value_matches_closed_form() {
        // uniform logits against a one-hot target with confidence 5 over 4 bins
        let (v, g) = binned_cls(&[0.0; 4], 1, BIN_CONFIDENCE);
        let z = BIN_CONFIDENCE.exp() + 3.0;
        let q = [1.0 / z, BIN_CONFIDENCE.exp() / z, 1.0 / z, 1.0 / z];
        let expected: f64 = q.iter().map(|qi| qi * (qi.ln() - 0.25f64.ln())).sum();
        assert!((v - expected).abs() < 1e-12);
        for j in 0..4 {
            assert!((g[j] - (0.25 - q[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn wrapped_regression_ignores_full_turns() {
        let spec = BinSpec::new(-PI, PI, 8, true);
        let hw = spec.half_width();
        let (v, _) = binned_reg(&[0.1 + 2.0 * PI / hw], &[0.1], &spec);
        assert!(v < 1e-20);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = ParamCodec::default();
        let w = LossWeights::default();
        let t = target();
        let mut v = c.encode_object(&t).unwrap();
        for (i, x) in v.iter_mut().enumerate() {
            *x += 0.05 * ((i * 37 % 11) as f64 - 5.0) / 5.0;
        }
        let l = object_loss(&c, &w, &v, &t).unwrap();
        let (num, _) =
            central_differences(|x| (object_loss(&c, &w, x, &t).unwrap().value, vec![]), &v, 1e-6);
        assert!(compare_gradients(&l.grad, &num, &[], 1e-5).passed);

        let lay = LayoutBox {
            center: [3.0, 0.1, 0.2],
            size: [6.0, 3.0, 5.0],
            yaw: -0.4,
        };
        let mut lv = c.encode_layout(&lay).unwrap();
        lv[0] += 0.3;
        lv[9] -= 0.2;
        let l = layout_loss(&c, &w, &lv, &lay).unwrap();
        let (num, _) =
            central_differences(|x| (layout_loss(&c, &w, x, &lay).unwrap().value, vec![]), &lv, 1e-6);
        assert!(compare_gradients(&l.grad, &num, &[], 1e-5).passed);

        let cam = CameraPose { beta: -0.2, gamma: 0.1 };
        let mut cv = c.encode_camera(&cam).unwrap();
        cv[1] += 0.7;
        cv[3] -= 0.1;
        let l = camera_loss(&c, &w, &cv, &cam).unwrap();
        let (num, _) =
            central_differences(|x| (camera_loss(&c, &w, x, &cam).unwrap().value, vec![]), &cv, 1e-6);
        assert!(compare_gradients(&l.grad, &num, &[], 1e-5).passed);
    }

    #[test]
    fn isolated_terms() {
        // only the size term is perturbed
        let c = ParamCodec::default();
        let w = LossWeights::default();
        let t = target();
        let mut v = c.encode_object(&t).unwrap();
        v[c.object_slots().size.start] += 0.1;
        let l = object_loss(&c, &w, &v, &t).unwrap();
        assert!((l.value - w.size * 0.01).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cls_is_nonnegative(logits in proptest::collection::vec(-10.0f64..10.0, 8), k in 0usize..8) {
            let (v, g) = binned_cls(&logits, k, BIN_CONFIDENCE);
            prop_assert!(v >= 0.0);
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}

//! The joint refinement objective and its gradient with respect to the
//! residual vectors.

use super::cooperative::{bounds_signature, BoxGradient, CooperativeLoss};
use super::param_loss::{aligned_target, camera_loss, layout_loss, object_loss};
use super::physical::{
    physical_signature, physical_violation, sample_inside_points, PhysicalConfig, PhysicalOutput,
};
use super::{LossError, LossReport, LossWeights};
use crate::geometry::recover_center_jacobian;
use crate::ldif::ShapeField;
use crate::scene::{ParamCodec, Residuals, SceneError, SceneState};

/// Everything the objective holds fixed while residuals vary.
pub struct JointInputs<'a> {
    pub codec: &'a ParamCodec,
    pub weights: &'a LossWeights,
    pub physical: &'a PhysicalConfig,
    pub cooperative: &'a dyn CooperativeLoss,
    pub initial: &'a SceneState,
    pub ground_truth: &'a SceneState,
    /// Shape fields of the initial objects, in order.
    pub fields: &'a [ShapeField],
    /// Seeds the physical-loss sampling.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub report: LossReport,
    pub refined: SceneState,
    /// Gradient of the total with respect to every residual entry.
    pub grads: Residuals,
    pub physical: PhysicalOutput,
}

fn base_vectors(
    codec: &ParamCodec,
    s: &SceneState,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>), SceneError> {
    let objects = s
        .objects
        .iter()
        .enumerate()
        .map(|(index, o)| {
            codec
                .encode_object(&o.param)
                .map_err(|source| SceneError::Geometry { index, source })
        })
        .collect::<Result<_, _>>()?;
    let layout = codec.encode_layout(&s.layout).map_err(SceneError::Layout)?;
    let camera = codec.encode_camera(&s.camera).map_err(SceneError::Camera)?;
    Ok((objects, layout, camera))
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `L_LEN + L_ODN + λ_co·L_co + λ_phy·L_phy` of the scene refined by
/// `residuals`, with its gradient. Predicted parameter vectors are the
/// encoded initial estimate plus the residuals.
pub fn joint_loss(inputs: &JointInputs, residuals: &Residuals) -> Result<JointOutput, LossError> {
    let JointInputs {
        codec,
        weights: w,
        initial,
        ground_truth: gt,
        ..
    } = *inputs;
    if initial.len() != gt.len() {
        return Err(LossError::Correspondence {
            pred: initial.len(),
            gt: gt.len(),
        });
    }
    let n = initial.len();
    let (refined, jac) = codec.apply_residuals(initial, residuals)?;
    let (obj0, lay0, cam0) = base_vectors(codec, initial)?;
    let mut grads = Residuals::zeros(codec, n);

    let lay = layout_loss(codec, w, &add(&lay0, &residuals.layout), &gt.layout)?;
    let cam = camera_loss(codec, w, &add(&cam0, &residuals.camera), &gt.camera)?;
    grads.layout = lay.grad;
    grads.camera = cam.grad;
    let len = lay.value + cam.value;

    let mut odn = 0.0;
    let inv_n = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    for i in 0..n {
        let l = object_loss(codec, w, &add(&obj0[i], &residuals.objects[i]), &aligned_target(initial, gt, i)?)?;
        odn += l.value * inv_n;
        for (g, v) in grads.objects[i].iter_mut().zip(l.grad) {
            *g = v * inv_n;
        }
    }

    let mut box_grads = vec![BoxGradient::default(); n];
    let mut camera_direct = [0.0; 2];

    let poses = refined.poses()?;
    let samples = sample_inside_points(inputs.fields, inputs.physical, inputs.seed);
    let phy = physical_violation(inputs.fields, &poses, &samples, w.alpha, w.k);
    for (bg, g) in box_grads.iter_mut().zip(&phy.pose_grads) {
        for a in 0..3 {
            bg.center[a] += w.physical * g[a];
            // scale is half the extent
            bg.size[a] += w.physical * 0.5 * g[3 + a];
        }
        bg.yaw += w.physical * g[6];
    }

    let co = inputs.cooperative.evaluate(&refined)?;
    for (bg, g) in box_grads.iter_mut().zip(&co.boxes) {
        bg.center += g.center * w.cooperative;
        bg.size += g.size * w.cooperative;
        bg.yaw += g.yaw * w.cooperative;
    }
    camera_direct[0] += w.cooperative * co.camera[0];
    camera_direct[1] += w.cooperative * co.camera[1];

    let mut d_beta = camera_direct[0];
    let mut d_gamma = camera_direct[1];
    for i in 0..n {
        let bg = &box_grads[i];
        let cj = recover_center_jacobian(&refined.objects[i].param, &refined.camera, &refined.intrinsics)
            .map_err(|source| SceneError::Geometry { index: i, source })?;
        let j = &jac.objects[i];
        let r = &mut grads.objects[i];
        for a in 0..2 {
            let (idx, f) = j.delta[a];
            r[idx] += f * cj.d_delta[a].dot(&bg.center);
        }
        if let Some((idx, f)) = j.distance {
            r[idx] += f * cj.d_distance.dot(&bg.center);
        }
        for a in 0..3 {
            if let Some(idx) = j.size[a] {
                r[idx] += bg.size[a];
            }
        }
        r[j.yaw.0] += j.yaw.1 * bg.yaw;
        d_beta += cj.d_beta.dot(&bg.center);
        d_gamma += cj.d_gamma.dot(&bg.center);
    }
    grads.camera[jac.camera.beta.0] += jac.camera.beta.1 * d_beta;
    grads.camera[jac.camera.gamma.0] += jac.camera.gamma.1 * d_gamma;

    Ok(JointOutput {
        report: LossReport::new(len, odn, co.value, phy.value, w),
        refined,
        grads,
        physical: phy,
    })
}

/// Branch pattern of [`joint_loss`] at `residuals`: winning bins, pinned
/// bounds, physical-loss branches and projected-bound corners.
pub fn joint_signature(inputs: &JointInputs, residuals: &Residuals) -> Result<Vec<i8>, LossError> {
    let (refined, jac) = inputs.codec.apply_residuals(inputs.initial, residuals)?;
    let mut sig = Vec::new();
    for j in &jac.objects {
        sig.push(j.distance.map_or(-1, |d| d.0 as i8));
        sig.extend(j.size.iter().map(|s| s.is_some() as i8));
        sig.push(j.yaw.0 as i8);
    }
    sig.extend(jac.layout.size.iter().map(|s| s.is_some() as i8));
    sig.extend([jac.layout.yaw.0 as i8, jac.camera.beta.0 as i8, jac.camera.gamma.0 as i8]);
    let poses = refined.poses()?;
    let samples = sample_inside_points(inputs.fields, inputs.physical, inputs.seed);
    sig.extend(physical_signature(
        inputs.fields,
        &poses,
        &samples,
        inputs.weights.alpha,
        inputs.weights.k,
    ));
    sig.extend(bounds_signature(&refined));
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraPose, LayoutBox, ObjectBoxParam, Vec3};
    use crate::ldif::{ElementDecoder, GaussianElement, LdifShape};
    use crate::losses::ProjectedBoundsLoss;
    use crate::scene::SceneObject;
    use crate::tensor::{central_differences, compare_gradients};

    fn shape() -> LdifShape {
        let mut s = LdifShape::empty();
        s.elements[16] = GaussianElement {
            c: -1.0,
            center: Vec3::zeros(),
            radii: Vec3::new(0.5, 0.5, 0.5),
            euler: Vec3::zeros(),
        };
        s.elements[3] = GaussianElement {
            c: -0.5,
            center: Vec3::new(0.4, 0.2, 0.1),
            radii: Vec3::new(0.3, 0.2, 0.3),
            euler: Vec3::new(0.1, 0.2, 0.0),
        };
        s
    }

    fn scene(offset: f64) -> SceneState {
        let objects = (0..3)
            .map(|i| SceneObject {
                param: ObjectBoxParam {
                    delta: [5.0 * i as f64 + offset, -3.0],
                    distance: 4.0 + 0.15 * i as f64 + 0.1 * offset,
                    size: [1.0, 0.9, 1.1],
                    yaw: 0.3 * i as f64 - 0.2 + 0.05 * offset,
                    bbox2d: [260.0 + 20.0 * i as f64, 200.0, 360.0 + 20.0 * i as f64, 300.0],
                    category: i,
                },
                score: 1.0,
                shape: Some(shape()),
                feature: vec![],
            })
            .collect();
        SceneState {
            intrinsics: CameraIntrinsics {
                fx: 530.0,
                fy: 530.0,
                cx: 320.0,
                cy: 240.0,
                image_w: 640.0,
                image_h: 480.0,
            },
            camera: CameraPose {
                beta: -0.1 + 0.02 * offset,
                gamma: 0.05,
            },
            layout: LayoutBox {
                center: [4.0, 0.0, 0.3 * offset],
                size: [8.0, 3.0, 8.0],
                yaw: 0.1,
            },
            layout_feature: vec![],
            objects,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let codec = ParamCodec::default();
        let weights = LossWeights {
            alpha: 5.0,
            ..LossWeights::default()
        };
        let physical = PhysicalConfig::default();
        let initial = scene(0.0);
        let gt = scene(1.0);
        let decoder = ElementDecoder::seeded(7);
        let fields = initial.fields(&decoder).unwrap();
        let inputs = JointInputs {
            codec: &codec,
            weights: &weights,
            physical: &physical,
            cooperative: &ProjectedBoundsLoss,
            initial: &initial,
            ground_truth: &gt,
            fields: &fields,
            seed: 11,
        };
        let mut r = Residuals::zeros(&codec, 3);
        for (i, v) in r.objects.iter_mut().flatten().enumerate() {
            *v = 0.02 * ((i * 7 % 13) as f64 - 6.0) / 6.0;
        }
        r.camera[2] = 0.1;
        let out = joint_loss(&inputs, &r).unwrap();
        assert!(out.report.phy > 0.0 && out.report.co > 0.0);
        let flat = |r: &Residuals| -> Vec<f64> {
            r.objects
                .iter()
                .flatten()
                .chain(&r.layout)
                .chain(&r.camera)
                .copied()
                .collect()
        };
        let unflat = |v: &[f64]| {
            let mut out = Residuals::zeros(&codec, 3);
            let mut it = v.iter().copied();
            for x in out.objects.iter_mut().flatten().chain(&mut out.layout).chain(&mut out.camera) {
                *x = it.next().unwrap();
            }
            out
        };
        let (num, skipped) = central_differences(
            |v| {
                let r = unflat(v);
                (
                    joint_loss(&inputs, &r).unwrap().report.total,
                    joint_signature(&inputs, &r).unwrap(),
                )
            },
            &flat(&r),
            1e-4,
        );
        let rep = compare_gradients(&flat(&out.grads), &num, &skipped, 1e-4);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn zero_weights_drop_terms() {
        let codec = ParamCodec::default();
        let weights = LossWeights {
            cooperative: 0.0,
            physical: 0.0,
            ..LossWeights::default()
        };
        let initial = scene(0.0);
        let gt = scene(1.0);
        let decoder = ElementDecoder::zeroed();
        let fields = initial.fields(&decoder).unwrap();
        let inputs = JointInputs {
            codec: &codec,
            weights: &weights,
            physical: &PhysicalConfig::default(),
            cooperative: &ProjectedBoundsLoss,
            initial: &initial,
            ground_truth: &gt,
            fields: &fields,
            seed: 0,
        };
        let out = joint_loss(&inputs, &Residuals::zeros(&codec, 3)).unwrap();
        assert_eq!(out.report.total, out.report.len + out.report.odn);
        assert_eq!(out.refined, initial);
    }
}

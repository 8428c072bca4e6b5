mod common;

use common::{monte_carlo_iou, random_box, sweep_ap, voxel_overlap};
use implicit_scene::geometry::{iou3d, Vec3, WorldBox};
use implicit_scene::io::{gen_synthetic, SynthConfig};
use implicit_scene::ldif::{ElementDecoder, GaussianElement, LdifShape, ObjectPose, ShapeField};
use implicit_scene::metrics::{
    collision_volume, detection_map, evaluate, pair_overlap, Detection, GroundTruthBox, MetricConfig, Region,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn iou_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..10 {
        let a = random_box(&mut rng, 0.4);
        let b = random_box(&mut rng, 0.4);
        let mc = monte_carlo_iou(&a, &b, 200_000, i);
        assert!((iou3d(&a, &b) - mc).abs() < 0.02, "pair {i}: {} vs {mc}", iou3d(&a, &b));
    }
}

fn random_instance(seed: u64, max_dets: usize, cats: usize) -> (Vec<Vec<Detection>>, Vec<Vec<GroundTruthBox>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes = rng.random_range(1..=3);
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for _ in 0..scenes {
        let g: Vec<GroundTruthBox> = (0..rng.random_range(0..5))
            .map(|_| GroundTruthBox {
                bbox: random_box(&mut rng, 1.5),
                category: rng.random_range(0..cats),
            })
            .collect();
        gts.push(g);
        preds.push(Vec::new());
    }
    let total = rng.random_range(0..=max_dets);
    for _ in 0..total {
        let s = rng.random_range(0..scenes);
        // jittered copies of ground truth mixed with clutter
        let (bbox, category) = match gts[s].get(rng.random_range(0..6)) {
            Some(g) => {
                let j = Vec3::from_fn(|_, _| rng.random_range(-0.4..0.4));
                (WorldBox::new(g.bbox.center + j, g.bbox.size, g.bbox.yaw), g.category)
            }
            None => (random_box(&mut rng, 1.5), rng.random_range(0..cats)),
        };
        preds[s].push(Detection {
            bbox,
            category,
            score: rng.random(),
        });
    }
    (preds, gts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_matches_the_threshold_sweep(seed in 0u64..1_000_000, thresh in 0.05f64..0.7) {
        let (preds, gts) = random_instance(seed, 20, 3);
        let r = detection_map(&preds, &gts, thresh);
        let oracle = sweep_ap(&preds, &gts, thresh);
        prop_assert_eq!(r.per_category.len(), oracle.len());
        for (c, ap) in &oracle {
            prop_assert!((r.per_category[c] - ap.to_f64()).abs() < 1e-12, "category {}: {} vs {:?}", c, r.per_category[c], ap);
        }
    }

    #[test]
    fn map_is_bounded(seed in 0u64..1_000_000) {
        let (preds, gts) = random_instance(seed, 20, 3);
        let r = detection_map(&preds, &gts, 0.15);
        prop_assert!((0.0..=1.0).contains(&r.map));
    }
}

fn blob(radius: f64) -> ShapeField {
    let mut s = LdifShape::empty();
    s.elements[16] = GaussianElement {
        c: -1.0,
        center: Vec3::zeros(),
        radii: Vec3::repeat(radius),
        euler: Vec3::zeros(),
    };
    ShapeField::new(&s, &ElementDecoder::zeroed())
}

#[test]
fn collision_volume_matches_the_voxel_oracle() {
    let f = blob(0.25);
    let pa = ObjectPose {
        translation: Vec3::new(0.0, 0.0, 0.0),
        scale: Vec3::new(0.6, 0.5, 0.4),
        yaw: 0.3,
    };
    let pb = ObjectPose {
        translation: Vec3::new(0.35, 0.1, -0.1),
        scale: Vec3::new(0.5, 0.5, 0.5),
        yaw: -0.7,
    };
    let f = &f;
    let region = |p: ObjectPose| Region {
        bounds: (p.translation - Vec3::repeat(1.0), p.translation + Vec3::repeat(1.0)),
        value: Box::new(move |x: &Vec3| p.world_value(f, x)),
    };
    let voxel = 0.025;
    let got = pair_overlap(&region(pa), &region(pb), voxel);
    // the oracle grid is aligned the same way: voxel centers at (k + ½)·voxel
    let want = voxel_overlap(
        |x| pa.world_value(f, x),
        |x| pb.world_value(f, x),
        Vec3::repeat(-1.5),
        Vec3::repeat(1.5),
        voxel,
    );
    assert!(want > 0.0);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert_eq!(collision_volume(&[region(pa), region(pb)], voxel), got);
}

#[test]
fn ground_truth_scores_perfectly() {
    let data = gen_synthetic(&SynthConfig {
        seed: 4,
        scenes: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let gts: Vec<_> = data.scenes(None).into_iter().map(|s| s.ground_truth.unwrap()).collect();
    let decoder = ElementDecoder::seeded(data.records[0].decoder_seed());
    let r = evaluate(&gts, &gts, &decoder, &MetricConfig::default()).unwrap();
    assert_eq!(r.map, 1.0);
    assert_eq!(r.layout_iou, 1.0);
    assert_eq!(r.mean_object_iou, 1.0);
    assert_eq!(r.pitch_error_deg, 0.0);
    assert_eq!(r.collision_volume_dm3, 0.0);
    assert_eq!(r.pixel_error_pct, 0.0);
    assert_eq!(r.corner_error_pct.unwrap_or(0.0), 0.0);
}

#[test]
fn noisy_estimates_score_worse_than_ground_truth() {
    let data = gen_synthetic(&SynthConfig {
        seed: 5,
        scenes: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let scenes = data.scenes(None);
    let est: Vec<_> = scenes.iter().map(|s| s.estimate.clone()).collect();
    let gts: Vec<_> = scenes.iter().map(|s| s.ground_truth.clone().unwrap()).collect();
    let decoder = ElementDecoder::seeded(data.records[0].decoder_seed());
    let r = evaluate(&est, &gts, &decoder, &MetricConfig::default()).unwrap();
    assert!(r.layout_iou < 1.0);
    assert!(r.mean_object_iou < 1.0);
    assert!(r.pixel_error_pct > 0.0);
    assert!(evaluate(&est[..1], &gts, &decoder, &MetricConfig::default()).is_err());
}

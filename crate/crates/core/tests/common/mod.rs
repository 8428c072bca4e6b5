//! Independent oracles shared by the integration tests and the acceptance
//! runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use implicit_scene::geometry::{iou3d, Vec3, WorldBox};
use implicit_scene::metrics::{Detection, GroundTruthBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_box(rng: &mut impl Rng, spread: f64) -> WorldBox {
    WorldBox::new(
        Vec3::from_fn(|_, _| rng.random_range(-spread..spread)),
        Vec3::from_fn(|_, _| rng.random_range(0.3..1.5)),
        rng.random_range(-3.2..3.2),
    )
}

fn inside(b: &WorldBox, p: &Vec3) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let d = p - b.center;
    // inverse yaw about +y
    let local = Vec3::new(c * d.x - s * d.z, d.y, s * d.x + c * d.z);
    (0..3).all(|i| local[i].abs() <= 0.5 * b.size[i])
}

fn bounding_radius(b: &WorldBox) -> Vec3 {
    let r = 0.5 * (b.size.x * b.size.x + b.size.z * b.size.z).sqrt();
    Vec3::new(r, 0.5 * b.size.y, r)
}

/// 3D IoU estimated from `samples` uniform points in a region covering both
/// boxes.
pub fn monte_carlo_iou(a: &WorldBox, b: &WorldBox, samples: usize, seed: u64) -> f64 {
    let lo = (a.center - bounding_radius(a)).inf(&(b.center - bounding_radius(b)));
    let hi = (a.center + bounding_radius(a)).sup(&(b.center + bounding_radius(b)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for _ in 0..samples {
        let p = Vec3::from_fn(|i, _| rng.random_range(lo[i]..hi[i]));
        let (ia, ib) = (inside(a, &p), inside(b, &p));
        na += ia as u64;
        nb += ib as u64;
        both += (ia && ib) as u64;
    }
    if na + nb == both {
        return 0.0;
    }
    both as f64 / (na + nb - both) as f64
}

/// Nonnegative rational `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Self {
        let g = gcd(num, den).max(1);
        Ratio { num: num / g, den: den / g }
    }

    pub fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn mul(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.num, self.den * o.den)
    }

    pub fn max(self, o: Ratio) -> Ratio {
        if self.num * o.den >= o.num * self.den {
            self
        } else {
            o
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// True positives and false positives among detections scoring at least
/// `t`, matching each one in score order to its best-overlapping
/// ground-truth box when that box is still free.
fn counts_at(preds: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>], cat: usize, thresh: f64, t: f64) -> (u128, u128) {
    let (mut tp, mut fp) = (0, 0);
    for (s, scene) in preds.iter().enumerate() {
        let mut kept: Vec<&Detection> = scene.iter().filter(|d| d.category == cat && d.score >= t).collect();
        kept.sort_by(|a, b| b.score.total_cmp(&a.score));
        let truth: Vec<&GroundTruthBox> = gts[s].iter().filter(|g| g.category == cat).collect();
        let mut used = vec![false; truth.len()];
        for d in kept {
            let best = truth
                .iter()
                .enumerate()
                .map(|(j, g)| (j, iou3d(&d.bbox, &g.bbox)))
                .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            match best {
                Some((j, v)) if v >= thresh && !used[j] => {
                    used[j] = true;
                    tp += 1;
                }
                _ => fp += 1,
            }
        }
    }
    (tp, fp)
}

/// Exact per-category AP from a sweep over every distinct score
/// threshold: the area under the recall curve with precision replaced by
/// the best precision at any threshold reaching at least that recall.
/// Scores must be distinct within a category.
pub fn sweep_ap(preds: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>], thresh: f64) -> BTreeMap<usize, Ratio> {
    let cats: BTreeSet<usize> = gts.iter().flatten().map(|g| g.category).collect();
    let mut out = BTreeMap::new();
    for &cat in &cats {
        let positives = gts.iter().flatten().filter(|g| g.category == cat).count() as u128;
        let mut scores: Vec<f64> = preds.iter().flatten().filter(|d| d.category == cat).map(|d| d.score).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        // (tp, precision) at each threshold, highest threshold first
        let points: Vec<(u128, Ratio)> = scores
            .iter()
            .map(|&t| {
                let (tp, fp) = counts_at(preds, gts, cat, thresh, t);
                (tp, Ratio::new(tp, tp + fp))
            })
            .collect();
        let mut ap = Ratio::new(0, 1);
        for r in 1..=positives {
            // best precision over thresholds whose recall reaches r / positives
            let best = points
                .iter()
                .filter(|(tp, _)| *tp >= r)
                .map(|(_, p)| *p)
                .fold(None, |acc: Option<Ratio>, p| Some(acc.map_or(p, |a| a.max(p))));
            if let Some(p) = best {
                ap = ap.add(p.mul(Ratio::new(1, positives)));
            }
        }
        out.insert(cat, ap);
    }
    out
}

/// Volume where both `a` and `b` are negative, from voxels of edge `voxel`
/// tiling `[lo, hi]` and sampled at their centers.
pub fn voxel_overlap(a: impl Fn(&Vec3) -> f64, b: impl Fn(&Vec3) -> f64, lo: Vec3, hi: Vec3, voxel: f64) -> f64 {
    let n = Vec3::from_fn(|i, _| ((hi[i] - lo[i]) / voxel).ceil());
    let mut count = 0u64;
    for i in 0..n.x as usize {
        for j in 0..n.y as usize {
            for k in 0..n.z as usize {
                let p = lo + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel;
                if a(&p) < 0.0 && b(&p) < 0.0 {
                    count += 1;
                }
            }
        }
    }
    count as f64 * voxel.powi(3)
}

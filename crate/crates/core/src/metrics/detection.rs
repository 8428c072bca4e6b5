//! Average precision of 3D detections.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{iou3d, WorldBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: WorldBox,
    pub category: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: WorldBox,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    /// AP of every category with at least one ground-truth box.
    pub per_category: BTreeMap<usize, f64>,
    pub map: f64,
    /// Categories that only appear among predictions.
    pub excluded: Vec<usize>,
}

/// Area under the interpolated precision–recall curve. `hits` lists the
/// true/false-positive outcome of every prediction in decreasing score
/// order; `positives` is the ground-truth count.
pub fn average_precision(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &h in hits {
        if h {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev {
            ap += (r - prev) * p;
            prev = *r;
        }
    }
    ap
}

/// Per-scene detections of one category, greedily matched in decreasing
/// score order: each prediction takes the ground-truth box it overlaps
/// most; it is a true positive when that overlap reaches `iou_thresh` and
/// the box is still unmatched.
fn category_hits(preds: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>], category: usize, iou_thresh: f64) -> (Vec<bool>, usize) {
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (s, scene) in preds.iter().enumerate() {
        for (i, d) in scene.iter().enumerate() {
            if d.category == category {
                order.push((s, i));
            }
        }
    }
    order.sort_by(|a, b| {
        preds[b.0][b.1]
            .score
            .total_cmp(&preds[a.0][a.1].score)
            .then(a.cmp(b))
    });
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let positives = gts.iter().flatten().filter(|g| g.category == category).count();
    let hits = order
        .iter()
        .map(|&(s, i)| {
            let d = &preds[s][i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.get(s).into_iter().flatten().enumerate() {
                if g.category != category {
                    continue;
                }
                let iou = iou3d(&d.bbox, &g.bbox);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= iou_thresh && !matched[s][j] => {
                    matched[s][j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect();
    (hits, positives)
}

/// Mean AP over categories with at least one ground-truth box.
pub fn detection_map(preds: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>], iou_thresh: f64) -> MapResult {
    let gt_cats: BTreeSet<usize> = gts.iter().flatten().map(|g| g.category).collect();
    let pred_cats: BTreeSet<usize> = preds.iter().flatten().map(|d| d.category).collect();
    let per_category: BTreeMap<usize, f64> = gt_cats
        .iter()
        .map(|&c| {
            let (hits, positives) = category_hits(preds, gts, c, iou_thresh);
            (c, average_precision(&hits, positives))
        })
        .collect();
    let map = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().sum::<f64>() / per_category.len() as f64
    };
    MapResult {
        per_category,
        map,
        excluded: pred_cats.difference(&gt_cats).copied().collect(),
    }
}

//! Evaluation: 3D detection mAP, layout IoU, camera angle errors,
//! collision volume, supporting error and layout projection errors.

mod detection;

pub use detection::{average_precision, detection_map, Detection, GroundTruthBox, MapResult};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    box_corners, camera_rotation, iou3d, project_point, CameraIntrinsics, CameraPose, LayoutBox, Vec3, WorldBox,
};
use crate::ldif::{ElementDecoder, ObjectPose, ShapeField};
use crate::scene::{SceneError, SceneState};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{predictions} predicted scenes but {ground_truth} ground-truth scenes")]
    SceneCount { predictions: usize, ground_truth: usize },
    #[error("scene {scene}: {predictions} predicted objects but {ground_truth} ground-truth objects")]
    ObjectCount {
        scene: usize,
        predictions: usize,
        ground_truth: usize,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// 3D IoU needed for a true positive.
    pub iou_thresh: f64,
    /// Voxel edge for collision volumes, meters.
    pub voxel: f64,
    /// A ground-truth object whose bottom lies this close to the floor
    /// counts as standing on it, meters.
    pub support_tolerance: f64,
    /// Rows of the raster used by the pixel error.
    pub raster_rows: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            iou_thresh: 0.15,
            voxel: 0.025,
            support_tolerance: 0.15,
            raster_rows: 480,
        }
    }
}

/// Layout IoU and absolute pitch/roll errors in degrees.
pub fn layout_metrics(pred: &LayoutBox, pred_cam: &CameraPose, gt: &LayoutBox, gt_cam: &CameraPose) -> (f64, f64, f64) {
    (
        iou3d(&pred.world_box(), &gt.world_box()),
        (pred_cam.beta - gt_cam.beta).abs().to_degrees(),
        (pred_cam.gamma - gt_cam.gamma).abs().to_degrees(),
    )
}

/// A solid given by the negative region of `value`, known to lie inside
/// `bounds`.
pub struct Region<'a> {
    pub bounds: (Vec3, Vec3),
    pub value: Box<dyn Fn(&Vec3) -> f64 + Sync + 'a>,
}

/// Volume shared by the interiors of two regions, counted on voxels of
/// edge `voxel` centered at `(k + ½)·voxel`.
pub fn pair_overlap(a: &Region, b: &Region, voxel: f64) -> f64 {
    let lo = a.bounds.0.sup(&b.bounds.0);
    let hi = a.bounds.1.inf(&b.bounds.1);
    if (0..3).any(|i| lo[i] >= hi[i]) {
        return 0.0;
    }
    let first = lo.map(|v| (v / voxel - 0.5).ceil() as i64);
    let last = hi.map(|v| (v / voxel - 0.5).floor() as i64);
    let mut count = 0u64;
    for i in first.x..=last.x {
        for j in first.y..=last.y {
            for k in first.z..=last.z {
                let p = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel;
                if (a.value)(&p) < 0.0 && (b.value)(&p) < 0.0 {
                    count += 1;
                }
            }
        }
    }
    count as f64 * voxel.powi(3)
}

/// Summed pairwise overlap volume in cubic meters.
pub fn collision_volume(regions: &[Region], voxel: f64) -> f64 {
    let pairs: Vec<(usize, usize)> = (0..regions.len())
        .flat_map(|i| (i + 1..regions.len()).map(move |j| (i, j)))
        .collect();
    let parts: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| pair_overlap(&regions[i], &regions[j], voxel))
        .collect();
    parts.iter().sum()
}

/// Interior regions of a scene's posed shapes. Each shape is assumed to
/// stay within its box inflated by a quarter.
pub fn shape_regions<'a>(
    scene: &SceneState,
    fields: &'a [ShapeField],
) -> Result<Vec<Region<'a>>, SceneError> {
    scene
        .world_boxes()?
        .iter()
        .zip(fields)
        .map(|(b, f)| {
            let pose = ObjectPose::from_box(b);
            let inflated = WorldBox::new(b.center, b.size * 1.25, b.yaw);
            Ok(Region {
                bounds: inflated.aabb(),
                value: Box::new(move |p: &Vec3| pose.world_value(f, p)),
            })
        })
        .collect()
}

/// Collision volume of a scene in cubic meters, `None` when any object
/// lacks a shape.
pub fn scene_collision_volume(scene: &SceneState, decoder: &ElementDecoder, voxel: f64) -> Result<Option<f64>, SceneError> {
    if scene.objects.iter().any(|o| o.shape.is_none()) {
        return Ok(None);
    }
    let fields = scene.fields(decoder)?;
    let regions = shape_regions(scene, &fields)?;
    Ok(Some(collision_volume(&regions, voxel)))
}

/// Mean `|bottom − floor|` over predicted boxes whose ground-truth box
/// stands on the floor, with the sample count. Meters.
pub fn support_error(pred: &[WorldBox], gt: &[WorldBox], floor: f64, tolerance: f64) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (p, g) in pred.iter().zip(gt) {
        if (g.bottom() - floor).abs() <= tolerance {
            sum += (p.bottom() - floor).abs();
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

fn layout_corners(l: &LayoutBox) -> [Vec3; 8] {
    box_corners(&l.world_box())
}

/// Corner error: mean image distance between corresponding layout corners,
/// over the image diagonal, ×100. Only corners that the ground-truth
/// camera sees inside the image and that lie in front of the predicted
/// camera take part; `None` when there are none.
pub fn corner_error(
    pred: &LayoutBox,
    pred_cam: &CameraPose,
    gt: &LayoutBox,
    gt_cam: &CameraPose,
    k: &CameraIntrinsics,
) -> Option<f64> {
    let (pc, gc) = (layout_corners(pred), layout_corners(gt));
    let mut sum = 0.0;
    let mut n = 0;
    for (a, b) in pc.iter().zip(&gc) {
        let Ok(pb) = project_point(b, gt_cam, k) else {
            continue;
        };
        if !(0.0..=k.image_w).contains(&pb.u) || !(0.0..=k.image_h).contains(&pb.v) {
            continue;
        }
        if let Ok(pa) = project_point(a, pred_cam, k) {
            sum += (pa.u - pb.u).hypot(pa.v - pb.v);
            n += 1;
        }
    }
    (n > 0).then(|| 100.0 * sum / n as f64 / k.diagonal())
}

/// Face of the layout cuboid a camera ray leaves through: `2·axis + side`,
/// or 6 when the ray misses.
fn exit_face(l: &LayoutBox, dir_world: &Vec3) -> u8 {
    let b = l.world_box();
    let o = b.to_local(&Vec3::zeros());
    let d = crate::geometry::yaw_matrix(b.yaw).transpose() * dir_world;
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    let mut face = 6u8;
    for a in 0..3 {
        let h = 0.5 * b.size[a];
        if d[a] == 0.0 {
            if o[a].abs() > h {
                return 6;
            }
            continue;
        }
        let t1 = (-h - o[a]) / d[a];
        let t2 = (h - o[a]) / d[a];
        let (near, far) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        t_in = t_in.max(near);
        if far < t_out {
            t_out = far;
            face = (2 * a + (d[a] > 0.0) as usize) as u8;
        }
    }
    if t_in > t_out || t_out <= 0.0 {
        6
    } else {
        face
    }
}

/// Pixel error: share of raster pixels whose layout face (floor, ceiling
/// or one of four walls, seen through each layout's own camera) differs,
/// ×100. The raster keeps the image aspect ratio with `rows` rows.
pub fn pixel_error(
    pred: &LayoutBox,
    pred_cam: &CameraPose,
    gt: &LayoutBox,
    gt_cam: &CameraPose,
    k: &CameraIntrinsics,
    rows: usize,
) -> f64 {
    let cols = ((rows as f64) * k.image_w / k.image_h).round().max(1.0) as usize;
    let (rp, rg) = (camera_rotation(pred_cam), camera_rotation(gt_cam));
    let differing: usize = (0..rows)
        .into_par_iter()
        .map(|r| {
            let v = (r as f64 + 0.5) * k.image_h / rows as f64;
            (0..cols)
                .filter(|&c| {
                    let u = (c as f64 + 0.5) * k.image_w / cols as f64;
                    let ray = Vec3::new(1.0, -(v - k.cy) / k.fy, (u - k.cx) / k.fx);
                    exit_face(pred, &(rp * ray)) != exit_face(gt, &(rg * ray))
                })
                .count()
        })
        .sum();
    100.0 * differing as f64 / (rows * cols) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenes: usize,
    pub iou_thresh: f64,
    /// Keyed by category index.
    pub per_category_ap: BTreeMap<usize, f64>,
    pub map: f64,
    /// Mean 3D IoU between corresponding predicted and ground-truth boxes.
    pub mean_object_iou: f64,
    pub layout_iou: f64,
    pub pitch_error_deg: f64,
    pub roll_error_deg: f64,
    /// Mean over scenes with shapes, cubic decimeters.
    pub collision_volume_dm3: f64,
    /// Scenes left out of the collision volume for lack of shapes.
    pub collision_skipped: usize,
    /// `None` when no ground-truth object stands on the floor.
    pub support_error_cm: Option<f64>,
    /// Mean over scenes with a visible layout corner.
    pub corner_error_pct: Option<f64>,
    pub pixel_error_pct: f64,
}

impl MetricReport {
    /// `category,ap` rows followed by a `mean` row.
    pub fn ap_csv(&self) -> String {
        let mut s = String::from("category,ap\n");
        for (c, ap) in &self.per_category_ap {
            s.push_str(&format!("{c},{ap}\n"));
        }
        s.push_str(&format!("mean,{}\n", self.map));
        s
    }
}

struct SceneMetrics {
    object_iou: Vec<f64>,
    layout: (f64, f64, f64),
    collision: Option<f64>,
    support: (f64, usize),
    corner: Option<f64>,
    pixel: f64,
}

fn scene_metrics(
    pred: &SceneState,
    gt: &SceneState,
    decoder: &ElementDecoder,
    config: &MetricConfig,
) -> Result<SceneMetrics, MetricError> {
    let pb = pred.world_boxes()?;
    let gb = gt.world_boxes()?;
    let floor = gt.floor_height();
    let (support_mean, support_n) = support_error(&pb, &gb, floor, config.support_tolerance);
    Ok(SceneMetrics {
        object_iou: pb.iter().zip(&gb).map(|(a, b)| iou3d(a, b)).collect(),
        layout: layout_metrics(&pred.layout, &pred.camera, &gt.layout, &gt.camera),
        collision: scene_collision_volume(pred, decoder, config.voxel)?,
        support: (support_mean * support_n as f64, support_n),
        corner: corner_error(&pred.layout, &pred.camera, &gt.layout, &gt.camera, &gt.intrinsics),
        pixel: pixel_error(&pred.layout, &pred.camera, &gt.layout, &gt.camera, &gt.intrinsics, config.raster_rows),
    })
}

/// Metrics of predicted scenes against their ground truth; objects
/// correspond by index.
pub fn evaluate(
    preds: &[SceneState],
    gts: &[SceneState],
    decoder: &ElementDecoder,
    config: &MetricConfig,
) -> Result<MetricReport, MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::SceneCount {
            predictions: preds.len(),
            ground_truth: gts.len(),
        });
    }
    for (s, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.len() != g.len() {
            return Err(MetricError::ObjectCount {
                scene: s,
                predictions: p.len(),
                ground_truth: g.len(),
            });
        }
    }
    let per_scene: Vec<SceneMetrics> = preds
        .par_iter()
        .zip(gts)
        .map(|(p, g)| scene_metrics(p, g, decoder, config))
        .collect::<Result<_, _>>()?;

    let dets: Vec<Vec<Detection>> = preds
        .iter()
        .map(|p| {
            Ok(p.world_boxes()?
                .into_iter()
                .zip(&p.objects)
                .map(|(b, o)| Detection {
                    bbox: b,
                    category: o.category(),
                    score: o.score,
                })
                .collect())
        })
        .collect::<Result<_, SceneError>>()?;
    let truth: Vec<Vec<GroundTruthBox>> = gts
        .iter()
        .map(|g| {
            Ok(g.world_boxes()?
                .into_iter()
                .zip(&g.objects)
                .map(|(b, o)| GroundTruthBox {
                    bbox: b,
                    category: o.category(),
                })
                .collect())
        })
        .collect::<Result<_, SceneError>>()?;
    let map = detection_map(&dets, &truth, config.iou_thresh);

    let n = per_scene.len().max(1) as f64;
    let ious: Vec<f64> = per_scene.iter().flat_map(|m| m.object_iou.iter().copied()).collect();
    let collisions: Vec<f64> = per_scene.iter().filter_map(|m| m.collision).collect();
    let corners: Vec<f64> = per_scene.iter().filter_map(|m| m.corner).collect();
    let (support_sum, support_n) = per_scene
        .iter()
        .fold((0.0, 0usize), |(s, c), m| (s + m.support.0, c + m.support.1));
    Ok(MetricReport {
        scenes: per_scene.len(),
        iou_thresh: config.iou_thresh,
        per_category_ap: map.per_category,
        map: map.map,
        mean_object_iou: if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 },
        layout_iou: per_scene.iter().map(|m| m.layout.0).sum::<f64>() / n,
        pitch_error_deg: per_scene.iter().map(|m| m.layout.1).sum::<f64>() / n,
        roll_error_deg: per_scene.iter().map(|m| m.layout.2).sum::<f64>() / n,
        collision_volume_dm3: if collisions.is_empty() {
            0.0
        } else {
            1e3 * collisions.iter().sum::<f64>() / collisions.len() as f64
        },
        collision_skipped: per_scene.len() - collisions.len(),
        support_error_cm: (support_n > 0).then(|| 100.0 * support_sum / support_n as f64),
        corner_error_pct: (!corners.is_empty()).then(|| corners.iter().sum::<f64>() / corners.len() as f64),
        pixel_error_pct: per_scene.iter().map(|m| m.pixel).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_region(b: WorldBox) -> Region<'static> {
        Region {
            bounds: b.aabb(),
            value: Box::new(move |p: &Vec3| {
                let l = b.to_local(p);
                (0..3).map(|i| l[i].abs() - 0.5 * b.size[i]).fold(f64::NEG_INFINITY, f64::max)
            }),
        }
    }

    #[test]
    fn identical_layouts_score_perfectly() {
        let l = LayoutBox {
            center: [2.0, 0.2, 0.1],
            size: [6.0, 3.0, 5.0],
            yaw: 0.1,
        };
        let cam = CameraPose { beta: -0.1, gamma: 0.02 };
        let k = CameraIntrinsics {
            fx: 530.0,
            fy: 530.0,
            cx: 320.0,
            cy: 240.0,
            image_w: 640.0,
            image_h: 480.0,
        };
        assert_eq!(layout_metrics(&l, &cam, &l, &cam), (1.0, 0.0, 0.0));
        assert_eq!(corner_error(&l, &cam, &l, &cam, &k), Some(0.0));
        assert_eq!(pixel_error(&l, &cam, &l, &cam, &k, 48), 0.0);
    }

    #[test]
    fn pitch_error_in_degrees() {
        let l = LayoutBox {
            center: [2.0, 0.0, 0.0],
            size: [6.0, 3.0, 5.0],
            yaw: 0.0,
        };
        let a = CameraPose {
            beta: 5f64.to_radians(),
            gamma: 0.0,
        };
        let b = CameraPose {
            beta: 3f64.to_radians(),
            gamma: 0.0,
        };
        let (_, pitch, roll) = layout_metrics(&l, &a, &l, &b);
        assert!((pitch - 2.0).abs() < 1e-12);
        assert_eq!(roll, 0.0);
    }

    #[test]
    fn disjoint_boxes_do_not_collide() {
        let a = box_region(WorldBox::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 0.0));
        let b = box_region(WorldBox::new(Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), 0.3));
        assert_eq!(collision_volume(&[a, b], 0.025), 0.0);
    }

    #[test]
    fn overlapping_boxes_match_closed_form() {
        // 1 m × 1 m × 0.5 m overlap
        let a = box_region(WorldBox::new(Vec3::new(0.013, 0.5, 0.007), Vec3::new(1.0, 1.0, 1.0), 0.0));
        let b = box_region(WorldBox::new(Vec3::new(0.513, 0.5, 0.007), Vec3::new(1.0, 1.0, 1.0), 0.0));
        let coarse = collision_volume(&[a, b], 0.025);
        assert!((coarse * 1e3 - 500.0).abs() < 10.0, "{coarse}");
        let a = box_region(WorldBox::new(Vec3::new(0.013, 0.5, 0.007), Vec3::new(1.0, 1.0, 1.0), 0.0));
        let b = box_region(WorldBox::new(Vec3::new(0.513, 0.5, 0.007), Vec3::new(1.0, 1.0, 1.0), 0.0));
        let fine = collision_volume(&[a, b], 0.0125);
        assert!((fine - coarse).abs() < 0.02 * fine);
    }

    #[test]
    fn support_error_uses_floor_standing_objects() {
        let gt = [
            WorldBox::new(Vec3::new(0.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 1.0), 0.0),
            WorldBox::new(Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 1.0, 1.0), 0.0),
        ];
        let pred = [
            WorldBox::new(Vec3::new(0.0, -0.9, 0.0), Vec3::new(1.0, 1.0, 1.0), 0.0),
            WorldBox::new(Vec3::new(0.0, 3.0, 0.0), Vec3::new(1.0, 1.0, 1.0), 0.0),
        ];
        let (e, n) = support_error(&pred, &gt, -1.5, 0.15);
        assert_eq!(n, 1);
        assert!((e - 0.1).abs() < 1e-12);
    }

    #[test]
    fn uniform_corner_shift_normalizes_by_diagonal() {
        // a 480×640 image has an 800 px diagonal
        let k = CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            image_w: 640.0,
            image_h: 480.0,
        };
        let cam = CameraPose::default();
        // a thin layout in a single depth plane shifts uniformly in the image
        let depth = 5.0;
        let gt = LayoutBox {
            center: [depth, 0.0, 0.0],
            size: [1e-9, 2.0, 2.0],
            yaw: 0.0,
        };
        let pred = LayoutBox {
            center: [depth, 0.0, 24.0 * depth / 500.0],
            ..gt
        };
        let e = corner_error(&pred, &cam, &gt, &cam, &k).unwrap();
        assert!((e - 3.0).abs() < 1e-6, "{e}");
    }

    #[test]
    fn csv_lists_every_category() {
        let r = MetricReport {
            scenes: 1,
            iou_thresh: 0.15,
            per_category_ap: [(0, 1.0), (2, 0.5)].into_iter().collect(),
            map: 0.75,
            mean_object_iou: 1.0,
            layout_iou: 1.0,
            pitch_error_deg: 0.0,
            roll_error_deg: 0.0,
            collision_volume_dm3: 0.0,
            collision_skipped: 0,
            support_error_cm: None,
            corner_error_pct: Some(0.0),
            pixel_error_pct: 0.0,
        };
        assert_eq!(r.ap_csv(), "category,ap\n0,1\n2,0.5\nmean,0.75\n");
    }
}

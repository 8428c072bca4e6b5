//! Node and relation input features.

use serde::{Deserialize, Serialize};

use super::{GraphError, SceneGraphSpec};
use crate::ldif::{ObjectPose, ANALYTIC_DIM, ELEMENT_COUNT};
use crate::scene::{ParamCodec, Scene, SceneError, SceneState};
use crate::tensor::Tensor;

/// Width of an object–object relation feature.
pub const RELATION_FEATURE_DIM: usize = 12;
/// Every embedded entry of an object–layout relation starts at this value.
pub const OBJECT_LAYOUT_RELATION_VALUE: f64 = 0.1;

/// Widths of the externally supplied features and the category count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub object_ext: usize,
    pub layout_ext: usize,
    pub categories: usize,
}

impl FeatureDims {
    pub fn object_dim(&self, codec: &ParamCodec) -> usize {
        self.object_ext + codec.object_dim() + 3 * ELEMENT_COUNT + ANALYTIC_DIM * ELEMENT_COUNT + self.categories
    }

    pub fn layout_dim(&self, codec: &ParamCodec) -> usize {
        self.layout_ext + codec.layout_dim() + codec.camera_dim() + 4
    }

    /// Widths shared by every estimate in `scenes`, with room for the
    /// largest category seen in estimates or ground truth.
    pub fn from_scenes<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> Result<Self, GraphError> {
        let mut object_ext: Option<usize> = None;
        let mut layout_ext: Option<usize> = None;
        let mut categories = 1;
        let mut any = false;
        for (i, s) in scenes.into_iter().enumerate() {
            any = true;
            let check = |slot: &mut Option<usize>, width: usize, node: String| {
                if *slot.get_or_insert(width) != width {
                    return Err(feature_err(node, format!("feature width {width} differs from {}", slot.unwrap())));
                }
                Ok(())
            };
            check(&mut layout_ext, s.estimate.layout_feature.len(), format!("scene {i} layout"))?;
            for (j, o) in s.estimate.objects.iter().enumerate() {
                check(&mut object_ext, o.feature.len(), format!("scene {i} object {j}"))?;
            }
            let seen = s.estimate.objects.iter().chain(s.ground_truth.iter().flat_map(|g| g.objects.iter()));
            categories = seen.map(|o| o.category() + 1).fold(categories, usize::max);
        }
        if !any {
            return Err(GraphError::NoTrainingData);
        }
        Ok(FeatureDims {
            object_ext: object_ext.unwrap_or(0),
            layout_ext: layout_ext.unwrap_or(0),
            categories,
        })
    }
}

/// Feature columns: one per object, one for the layout and one per
/// object–object relation (in [`SceneGraphSpec::object_relations`] order).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub object: Tensor,
    pub layout: Tensor,
    pub relation: Tensor,
}

fn feature_err(node: String, detail: impl Into<String>) -> GraphError {
    GraphError::Feature {
        node,
        detail: detail.into(),
    }
}

fn relation_feature(a: &[f64; 4], b: &[f64; 4], w: f64, h: f64) -> [f64; RELATION_FEATURE_DIM] {
    let (ws, hs) = (a[2] - a[0], a[3] - a[1]);
    let (wd, hd) = (b[2] - b[0], b[3] - b[1]);
    let dx = 0.5 * (b[0] + b[2]) - 0.5 * (a[0] + a[2]);
    let dy = 0.5 * (b[1] + b[3]) - 0.5 * (a[1] + a[3]);
    [
        dx / ws,
        dy / hs,
        (wd / ws).ln(),
        (hd / hs).ln(),
        a[0] / w,
        a[1] / h,
        a[2] / w,
        a[3] / h,
        b[0] / w,
        b[1] / h,
        b[2] / w,
        b[3] / h,
    ]
}

pub fn assemble_features(
    scene: &SceneState,
    spec: &SceneGraphSpec,
    dims: &FeatureDims,
    codec: &ParamCodec,
) -> Result<FeatureBundle, GraphError> {
    let n = spec.n_objects;
    if n == 0 {
        return Err(GraphError::NoObjects);
    }
    let fo = dims.object_dim(codec);
    let mut object = Tensor::zeros(&[fo, n]);
    for (i, o) in scene.objects.iter().enumerate() {
        let node = || format!("object {i}");
        if o.feature.len() != dims.object_ext {
            return Err(feature_err(
                node(),
                format!("expected {} external feature values, got {}", dims.object_ext, o.feature.len()),
            ));
        }
        if o.param.category >= dims.categories {
            return Err(feature_err(node(), format!("category {} out of range", o.param.category)));
        }
        let [bw, bh] = o.param.bbox_size();
        if !(bw > 0.0 && bh > 0.0) {
            return Err(feature_err(node(), "degenerate detection box"));
        }
        let shape = o.shape.as_ref().ok_or(SceneError::MissingShape { index: i })?;
        let mut col = o.feature.clone();
        col.extend(
            codec
                .encode_object(&o.param)
                .map_err(|source| SceneError::Geometry { index: i, source })?,
        );
        let pose = ObjectPose::from_box(&scene.world_box(i)?);
        for c in shape.world_element_centers(&pose) {
            col.extend(c.iter());
        }
        for e in &shape.elements {
            col.push(e.c);
            col.extend(e.center.iter());
            col.extend(e.radii.iter());
            col.extend(e.euler.iter());
        }
        let mut onehot = vec![0.0; dims.categories];
        onehot[o.param.category] = 1.0;
        col.extend(onehot);
        debug_assert_eq!(col.len(), fo);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(feature_err(node(), "non-finite feature"));
        }
        for (r, v) in col.into_iter().enumerate() {
            object.set(r, i, v);
        }
    }

    if scene.layout_feature.len() != dims.layout_ext {
        return Err(feature_err(
            "layout".into(),
            format!(
                "expected {} external feature values, got {}",
                dims.layout_ext,
                scene.layout_feature.len()
            ),
        ));
    }
    let k = &scene.intrinsics;
    let mut lay = scene.layout_feature.clone();
    lay.extend(codec.encode_layout(&scene.layout).map_err(SceneError::Layout)?);
    lay.extend(codec.encode_camera(&scene.camera).map_err(SceneError::Camera)?);
    lay.extend([k.fx / k.image_h, k.fy / k.image_h, k.cx / k.image_h, k.cy / k.image_h]);
    if lay.iter().any(|v| !v.is_finite()) {
        return Err(feature_err("layout".into(), "non-finite feature"));
    }
    let layout = Tensor::column(lay)?;

    let pairs: Vec<(usize, usize)> = spec.object_relations().collect();
    let mut relation = Tensor::zeros(&[RELATION_FEATURE_DIM, pairs.len()]);
    for (c, (i, j)) in pairs.into_iter().enumerate() {
        let f = relation_feature(
            &scene.objects[i].param.bbox2d,
            &scene.objects[j].param.bbox2d,
            k.image_w,
            k.image_h,
        );
        for (r, v) in f.into_iter().enumerate() {
            relation.set(r, c, v);
        }
    }
    Ok(FeatureBundle {
        object,
        layout,
        relation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_feature_of_identical_boxes() {
        let b = [10.0, 20.0, 110.0, 70.0];
        let f = relation_feature(&b, &b, 640.0, 480.0);
        assert_eq!(&f[..4], &[0.0; 4]);
        assert_eq!(&f[4..8], &f[8..12]);
    }

    #[test]
    fn relation_feature_is_directional() {
        let a = [10.0, 20.0, 110.0, 70.0];
        let b = [200.0, 40.0, 260.0, 160.0];
        let ab = relation_feature(&a, &b, 640.0, 480.0);
        let ba = relation_feature(&b, &a, 640.0, 480.0);
        assert!((ab[0] - 1.7).abs() < 1e-12);
        assert!((ab[2] + ba[2]).abs() < 1e-12);
        assert_eq!(&ab[4..8], &ba[8..12]);
    }
}

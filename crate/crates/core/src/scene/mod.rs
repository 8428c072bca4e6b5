//! The refinable scene: camera, layout box and camera-relative object boxes
//! with attached shapes.

mod params;

pub use params::{
    CameraParamJacobian, LayoutParamJacobian, ObjectParamJacobian, ParamCodec, Residuals,
    BIN_CONFIDENCE, CAMERA_PARAM_DIM, LAYOUT_PARAM_DIM, MIN_DISTANCE, MIN_SIZE, OBJ_PARAM_DIM,
};

use thiserror::Error;

use crate::geometry::{
    recover_world_box, CameraIntrinsics, CameraPose, GeometryError, LayoutBox, ObjectBoxParam,
    WorldBox,
};
use crate::ldif::{ElementDecoder, LdifError, LdifShape, ObjectPose, ShapeField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("object {index}: {source}")]
    Geometry {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("camera: {0}")]
    Camera(GeometryError),
    #[error("layout: {0}")]
    Layout(GeometryError),
    #[error("object {index} has no shape")]
    MissingShape { index: usize },
    #[error("object {index}: {source}")]
    Shape {
        index: usize,
        #[source]
        source: LdifError,
    },
    #[error("{what}: expected {expected} entries, got {actual}")]
    Length {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("scene has no objects")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub param: ObjectBoxParam,
    /// Detection confidence.
    pub score: f64,
    pub shape: Option<LdifShape>,
    /// Appearance-relationship feature supplied by an upstream encoder.
    pub feature: Vec<f64>,
}

impl SceneObject {
    pub fn category(&self) -> usize {
        self.param.category
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub intrinsics: CameraIntrinsics,
    pub camera: CameraPose,
    pub layout: LayoutBox,
    /// Layout encoder feature supplied upstream.
    pub layout_feature: Vec<f64>,
    pub objects: Vec<SceneObject>,
}

impl SceneState {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn world_box(&self, index: usize) -> Result<WorldBox, SceneError> {
        recover_world_box(&self.objects[index].param, &self.camera, &self.intrinsics)
            .map_err(|source| SceneError::Geometry { index, source })
    }

    pub fn world_boxes(&self) -> Result<Vec<WorldBox>, SceneError> {
        (0..self.objects.len()).map(|i| self.world_box(i)).collect()
    }

    pub fn poses(&self) -> Result<Vec<ObjectPose>, SceneError> {
        Ok(self.world_boxes()?.iter().map(ObjectPose::from_box).collect())
    }

    /// Prepared fields of every object; errors on a missing or invalid
    /// shape.
    pub fn fields(&self, decoder: &ElementDecoder) -> Result<Vec<ShapeField>, SceneError> {
        self.objects
            .iter()
            .enumerate()
            .map(|(index, o)| {
                let shape = o.shape.as_ref().ok_or(SceneError::MissingShape { index })?;
                shape
                    .validate()
                    .map_err(|source| SceneError::Shape { index, source })?;
                Ok(ShapeField::new(shape, decoder))
            })
            .collect()
    }

    /// Height of the floor plane: the bottom face of the layout box.
    pub fn floor_height(&self) -> f64 {
        self.layout.world_box().bottom()
    }
}

/// An estimate together with its optional ground truth. Objects correspond
/// by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub estimate: SceneState,
    pub ground_truth: Option<SceneState>,
}

/// Where every refined value of a scene came from (see
/// [`ObjectParamJacobian`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneJacobian {
    pub objects: Vec<ObjectParamJacobian>,
    pub layout: LayoutParamJacobian,
    pub camera: CameraParamJacobian,
}

impl ParamCodec {
    /// Applies residuals to every parameter of `state`. Shapes, features,
    /// scores, detection boxes and categories are carried over unchanged.
    pub fn apply_residuals(
        &self,
        state: &SceneState,
        residuals: &Residuals,
    ) -> Result<(SceneState, SceneJacobian), SceneError> {
        if residuals.objects.len() != state.objects.len() {
            return Err(SceneError::Length {
                what: "object residuals".into(),
                expected: state.objects.len(),
                actual: residuals.objects.len(),
            });
        }
        let mut out = state.clone();
        let mut objects = Vec::with_capacity(state.objects.len());
        for (i, (o, r)) in state.objects.iter().zip(&residuals.objects).enumerate() {
            let (p, j) = self.apply_object(i, &o.param, r)?;
            out.objects[i].param = p;
            objects.push(j);
        }
        let (layout, lj) = self.apply_layout(&state.layout, &residuals.layout)?;
        let (camera, cj) = self.apply_camera(&state.camera, &residuals.camera)?;
        out.layout = layout;
        out.camera = camera;
        Ok((
            out,
            SceneJacobian {
                objects,
                layout: lj,
                camera: cj,
            },
        ))
    }
}

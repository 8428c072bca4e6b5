//! Scene files, dataset manifests and the synthetic scene generator.
//!
//! A scene file is one JSON document:
//!
//! ```text
//! {
//!   "schema": 1,
//!   "name": "scene_0003",            (optional)
//!   "decoder_seed": 7711,            (optional)
//!   "intrinsics": { fx, fy, cx, cy, image_w, image_h },
//!   "estimate": {
//!     "camera": { beta, gamma },
//!     "layout": { center, size, yaw },
//!     "layout_feature": [..],
//!     "objects": [ { "param": { delta, distance, size, yaw, bbox2d, category },
//!                    "score": 0.9, "code": [1344 values] | null, "feature": [..] } ]
//!   },
//!   "ground_truth": { same as estimate } | null
//! }
//! ```
//!
//! Files written by [`save_scene`] are canonical: loading and saving one
//! reproduces it byte for byte.

mod synth;

pub use synth::{gen_synthetic, FeatureHints, NoiseConfig, SynthConfig, SynthDataset, CATEGORY_NAMES};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraPose, LayoutBox, ObjectBoxParam};
use crate::ldif::{LdifShape, CODE_LEN, DEFAULT_DECODER_SEED};
use crate::scene::{Scene, SceneObject, SceneState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    /// `pointer` is a JSON pointer to the offending value.
    #[error("{file}: {pointer}: {message}")]
    Schema {
        file: String,
        pointer: String,
        message: String,
    },
    #[error("{file}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub param: ObjectBoxParam,
    pub score: f64,
    #[serde(default)]
    pub code: Option<Vec<f64>>,
    #[serde(default)]
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub camera: CameraPose,
    pub layout: LayoutBox,
    #[serde(default)]
    pub layout_feature: Vec<f64>,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_seed: Option<u64>,
    pub intrinsics: CameraIntrinsics,
    pub estimate: StateRecord,
    #[serde(default)]
    pub ground_truth: Option<StateRecord>,
}

fn schema_err(file: &str, pointer: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::Schema {
        file: file.to_string(),
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl SceneRecord {
    /// Parses and validates a scene document. `file` labels errors.
    pub fn from_json(text: &str, file: &str) -> Result<Self, DataError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let rec: SceneRecord = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            schema_err(file, pointer, e.into_inner().to_string())
        })?;
        rec.validate(file)?;
        Ok(rec)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene records serialize");
        s.push('\n');
        s
    }

    fn validate(&self, file: &str) -> Result<(), DataError> {
        if self.schema != SCHEMA_VERSION {
            return Err(schema_err(
                file,
                "/schema",
                format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0 && k.image_w > 0.0 && k.image_h > 0.0) {
            return Err(schema_err(file, "/intrinsics", "focal lengths and image size must be positive"));
        }
        validate_state(&self.estimate, "/estimate", file)?;
        if let Some(gt) = &self.ground_truth {
            validate_state(gt, "/ground_truth", file)?;
            if gt.objects.len() != self.estimate.objects.len() {
                return Err(schema_err(
                    file,
                    "/ground_truth/objects",
                    format!(
                        "ground truth has {} objects, estimate has {}",
                        gt.objects.len(),
                        self.estimate.objects.len()
                    ),
                ));
            }
            for (i, (a, b)) in self.estimate.objects.iter().zip(&gt.objects).enumerate() {
                if a.param.category != b.param.category {
                    return Err(schema_err(
                        file,
                        format!("/ground_truth/objects/{i}/param/category"),
                        format!("object {i}: category differs from the estimate"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn decoder_seed(&self) -> u64 {
        self.decoder_seed.unwrap_or(DEFAULT_DECODER_SEED)
    }

    pub fn to_scene(&self) -> Result<Scene, DataError> {
        Ok(Scene {
            estimate: state_from_record(&self.estimate, &self.intrinsics),
            ground_truth: self.ground_truth.as_ref().map(|g| state_from_record(g, &self.intrinsics)),
        })
    }

    pub fn from_scene(scene: &Scene, name: Option<String>, decoder_seed: Option<u64>) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            name,
            decoder_seed,
            intrinsics: scene.estimate.intrinsics,
            estimate: record_from_state(&scene.estimate),
            ground_truth: scene.ground_truth.as_ref().map(record_from_state),
        }
    }
}

fn validate_state(s: &StateRecord, at: &str, file: &str) -> Result<(), DataError> {
    let ext = s.objects.first().map(|o| o.feature.len());
    for (i, o) in s.objects.iter().enumerate() {
        let here = format!("{at}/objects/{i}");
        if let Some(code) = &o.code {
            if code.len() != CODE_LEN {
                return Err(schema_err(
                    file,
                    format!("{here}/code"),
                    format!("object {i}: code must have {CODE_LEN} values, got {}", code.len()),
                ));
            }
            let shape = LdifShape::unpack(code).expect("length checked");
            shape
                .validate()
                .map_err(|e| schema_err(file, format!("{here}/code"), format!("object {i}: {e}")))?;
        }
        if Some(o.feature.len()) != ext {
            return Err(schema_err(
                file,
                format!("{here}/feature"),
                format!("object {i}: feature length {} differs from object 0", o.feature.len()),
            ));
        }
        let [w, h] = o.param.bbox_size();
        if !(w > 0.0 && h > 0.0) {
            return Err(schema_err(file, format!("{here}/param/bbox2d"), format!("object {i}: empty 2D box")));
        }
        if !(o.param.distance > 0.0) {
            return Err(schema_err(
                file,
                format!("{here}/param/distance"),
                format!("object {i}: distance must be positive"),
            ));
        }
        if o.param.size.iter().any(|&v| !(v > 0.0)) {
            return Err(schema_err(file, format!("{here}/param/size"), format!("object {i}: sizes must be positive")));
        }
    }
    if s.layout.size.iter().any(|&v| !(v > 0.0)) {
        return Err(schema_err(file, format!("{at}/layout/size"), "layout sizes must be positive"));
    }
    Ok(())
}

fn state_from_record(r: &StateRecord, k: &CameraIntrinsics) -> SceneState {
    SceneState {
        intrinsics: *k,
        camera: r.camera,
        layout: r.layout,
        layout_feature: r.layout_feature.clone(),
        objects: r
            .objects
            .iter()
            .map(|o| SceneObject {
                param: o.param,
                score: o.score,
                shape: o.code.as_ref().map(|c| LdifShape::unpack(c).expect("validated length")),
                feature: o.feature.clone(),
            })
            .collect(),
    }
}

fn record_from_state(s: &SceneState) -> StateRecord {
    StateRecord {
        camera: s.camera,
        layout: s.layout,
        layout_feature: s.layout_feature.clone(),
        objects: s
            .objects
            .iter()
            .map(|o| ObjectRecord {
                param: o.param,
                score: o.score,
                code: o.shape.as_ref().map(LdifShape::pack),
                feature: o.feature.clone(),
            })
            .collect(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        file: path.display().to_string(),
        source,
    }
}

pub fn load_scene(path: &Path) -> Result<SceneRecord, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    SceneRecord::from_json(&text, &path.display().to_string())
}

pub fn save_scene(path: &Path, record: &SceneRecord) -> Result<(), DataError> {
    std::fs::write(path, record.to_json()).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub split: String,
}

/// A list of scene files with split tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub scenes: Vec<ManifestEntry>,
    /// Generator seed when the scenes are synthetic.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Generator configuration when the scenes are synthetic.
    #[serde(default)]
    pub generator: Option<SynthConfig>,
    /// Mean 3D IoU of initial estimates against ground truth.
    #[serde(default)]
    pub mean_initial_iou: Option<f64>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let m: DatasetManifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            schema_err(&path.display().to_string(), pointer, e.into_inner().to_string())
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for (i, s) in m.scenes.iter().enumerate() {
            if !dir.join(&s.path).is_file() {
                return Err(schema_err(
                    &path.display().to_string(),
                    format!("/scenes/{i}/path"),
                    format!("missing scene file {}", s.path.display()),
                ));
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Absolute paths of the scenes tagged `split` (all scenes for `None`).
    pub fn paths(&self, dir: &Path, split: Option<&str>) -> Vec<PathBuf> {
        self.scenes
            .iter()
            .filter(|s| split.is_none_or(|t| s.split == t))
            .map(|s| dir.join(&s.path))
            .collect()
    }
}

/// Writes a synthetic dataset as scene files plus [`MANIFEST_FILE`].
pub fn write_dataset(dir: &Path, data: &SynthDataset) -> Result<DatasetManifest, DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut scenes = Vec::with_capacity(data.records.len());
    for (rec, split) in data.records.iter().zip(&data.splits) {
        let name = rec.name.clone().expect("generated scenes are named");
        let rel = PathBuf::from(format!("{name}.json"));
        save_scene(&dir.join(&rel), rec)?;
        scenes.push(ManifestEntry {
            path: rel,
            split: split.clone(),
        });
    }
    let manifest = DatasetManifest {
        scenes,
        seed: Some(data.config.seed),
        generator: Some(data.config.clone()),
        mean_initial_iou: Some(data.mean_initial_iou),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()).map_err(io_err(&path))?;
    Ok(manifest)
}

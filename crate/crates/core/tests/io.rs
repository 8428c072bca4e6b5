use std::path::PathBuf;

use implicit_scene::io::{
    gen_synthetic, load_scene, save_scene, write_dataset, DataError, DatasetManifest, SceneRecord, SynthConfig,
    MANIFEST_FILE,
};

fn sample_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample_scene.json")
}

#[test]
fn sample_scene_loads_and_round_trips() {
    let text = std::fs::read_to_string(sample_path()).unwrap();
    let rec = load_scene(&sample_path()).unwrap();
    assert_eq!(rec.estimate.objects.len(), 2);
    assert!(rec.ground_truth.is_some());
    assert_eq!(rec.to_json(), text);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.json");
    save_scene(&out, &rec).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn dataset_directory_round_trips() {
    let config = SynthConfig {
        seed: 12,
        scenes: 5,
        ..SynthConfig::default()
    };
    let data = gen_synthetic(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_dataset(dir.path(), &data).unwrap();
    let manifest = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, written);
    assert_eq!(manifest.seed, Some(12));
    assert_eq!(manifest.generator.as_ref(), Some(&config));
    let test = manifest.paths(dir.path(), Some("test"));
    let train = manifest.paths(dir.path(), Some("train"));
    assert_eq!(test.len() + train.len(), 5);
    assert_eq!(test.len(), 1);
    for (p, rec) in manifest.paths(dir.path(), None).iter().zip(&data.records) {
        assert_eq!(&load_scene(p).unwrap(), rec);
    }
}

#[test]
fn missing_scene_file_fails_manifest_load() {
    let data = gen_synthetic(&SynthConfig {
        scenes: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &data).unwrap();
    std::fs::remove_file(dir.path().join(&m.scenes[1].path)).unwrap();
    let err = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap_err();
    assert!(err.to_string().contains("/scenes/1/path"), "{err}");
}

#[test]
fn schema_errors_point_at_the_field() {
    let text = std::fs::read_to_string(sample_path()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["estimate"]["objects"][0]["score"] = serde_json::Value::String("high".into());
    let err = SceneRecord::from_json(&v.to_string(), "edited").unwrap_err();
    assert!(matches!(&err, DataError::Schema { pointer, .. } if pointer == "/estimate/objects/0/score"), "{err}");

    v["estimate"]["objects"][0]["score"] = serde_json::json!(0.5);
    v["schema"] = serde_json::json!(2);
    assert!(SceneRecord::from_json(&v.to_string(), "edited").is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_scene(&PathBuf::from("/nonexistent/scene.json")).unwrap_err();
    assert!(matches!(err, DataError::Io { .. }));
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use implicit_scene::fit::{chamfer_to_target, fit_shape, FitConfig, Sphere};
use implicit_scene::gradcheck::{self, SuiteReport};
use implicit_scene::graph::{
    evaluate_loss, read_checkpoint, refine, train_sgcn, write_checkpoint, Checkpoint, FeatureDims, Network,
    SgcnConfig, SgcnWeights, TrainConfig,
};
use implicit_scene::io::{
    gen_synthetic, load_scene, save_scene, write_dataset, DatasetManifest, ManifestEntry, SceneRecord,
    SynthConfig, CATEGORY_NAMES, MANIFEST_FILE,
};
use implicit_scene::ldif::{ElementDecoder, ShapeField, DEFAULT_DECODER_SEED};
use implicit_scene::losses::{LossReport, ProjectedBoundsLoss};
use implicit_scene::mesher::{extract_shape, extract_world_shape, GridSpec, DEFAULT_RESOLUTION};
use implicit_scene::metrics::{evaluate, MetricConfig};
use implicit_scene::optim::AdamConfig;
use implicit_scene::scene::{ParamCodec, Scene, SceneState};

const THREADS_VAR: &str = "IMPLICIT_SCENE_THREADS";

/// Refines indoor scenes made of boxes and implicit shapes.
#[derive(Parser)]
#[command(name = "implicit-scene", version)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Gen(GenArgs),
    /// Fit a shape code to an analytic sphere.
    FitShape(FitArgs),
    /// Train the refinement network and refine held-out scenes.
    Refine(RefineArgs),
    /// Extract posed object meshes.
    Mesh(MeshArgs),
    /// Score estimates against ground truth.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator settings as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    min_objects: Option<usize>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    center: [f64; 3],
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Near-surface and uniform samples, each.
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    /// Grid resolution of the written mesh and the Chamfer evaluation.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 10_000)]
    chamfer_samples: usize,
    #[arg(long, default_value_t = DEFAULT_DECODER_SEED)]
    decoder_seed: u64,
}

#[derive(Args)]
struct RefineArgs {
    /// Dataset directory holding a manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    train_split: String,
    #[arg(long, default_value = "test")]
    apply_split: String,
    /// Apply these weights instead of training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long)]
    lambda_phy: Option<f64>,
    #[arg(long)]
    lambda_co: Option<f64>,
    /// Neighbors per object in the physical-violation loss.
    #[arg(long)]
    k: Option<usize>,
    /// Node representation width.
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    head_hidden: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshFormat {
    Obj,
    Ply,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Estimate,
    GroundTruth,
}

#[derive(Args)]
struct MeshArgs {
    /// Scene files.
    #[arg(required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long, value_enum, default_value = "obj")]
    format: MeshFormat,
    #[arg(long, value_enum, default_value = "estimate")]
    state: Which,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene files or directories; a directory with a manifest contributes
    /// its listed scenes, otherwise every JSON file in it.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Only scenes with this manifest split tag.
    #[arg(long)]
    split: Option<String>,
    #[arg(long, default_value_t = 0.15)]
    iou_thresh: f64,
    #[arg(long, default_value_t = 0.025)]
    voxel: f64,
    /// Directory for `metrics.json` and `ap.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Scene for the joint-loss suite; random scenes otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    configs: usize,
    /// Also write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated numbers".into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen(seed: u64, a: &GenArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    config.seed = seed;
    if let Some(n) = a.scenes {
        config.scenes = n;
    }
    if let Some(n) = a.min_objects {
        config.objects.0 = n;
    }
    if let Some(n) = a.max_objects {
        config.objects.1 = n;
    }
    if let Some(f) = a.test_fraction {
        config.test_fraction = f;
    }
    let data = gen_synthetic(&config)?;
    let manifest = write_dataset(&a.out, &data)?;
    println!(
        "wrote {} scenes to {} (mean initial IoU {:.3})",
        manifest.scenes.len(),
        a.out.display(),
        data.mean_initial_iou
    );
    Ok(())
}

#[derive(Serialize)]
struct FitShapeFile<'a> {
    schema: u32,
    decoder_seed: u64,
    code: &'a [f64],
}

#[derive(Serialize)]
struct FitSummary {
    steps: usize,
    initial_loss: f64,
    best_loss: f64,
    loss_ratio: f64,
    initial_chamfer: f64,
    final_chamfer: f64,
    chamfer_ratio: f64,
}

fn fit(seed: u64, a: &FitArgs) -> Result<()> {
    if !(a.radius > 0.0 && a.radius < 1.0) {
        bail!("radius must lie in (0, 1), got {}", a.radius);
    }
    create_dir(&a.out)?;
    let config = FitConfig {
        steps: a.steps,
        lr: a.lr,
        near_samples: a.samples,
        uniform_samples: a.samples,
        seed,
        ..FitConfig::default()
    };
    let target = Sphere {
        center: a.center,
        radius: a.radius,
    };
    let decoder = ElementDecoder::seeded(a.decoder_seed);
    let r = fit_shape(&target, &decoder, &config)?;

    let code = r.shape.pack();
    write_json(
        &a.out.join("shape.json"),
        &FitShapeFile {
            schema: 1,
            decoder_seed: a.decoder_seed,
            code: &code,
        },
    )?;
    let mut log = String::from("step,loss,best\n");
    for e in &r.log {
        log.push_str(&format!("{},{},{}\n", e.step, e.loss, e.best));
    }
    fs::write(a.out.join("fit_log.csv"), log)?;

    let field = ShapeField::new(&r.shape, &decoder);
    let mesh = extract_shape(&field, &GridSpec::cube(a.resolution))?;
    let mut w = BufWriter::new(File::create(a.out.join("shape.obj"))?);
    mesh.write_obj(&mut w)?;
    w.flush()?;

    let chamfer = |shape| {
        chamfer_to_target(shape, &decoder, &target, a.resolution, config.extent, a.chamfer_samples, seed)
    };
    let (c0, c1) = (chamfer(&r.initial_shape)?, chamfer(&r.shape)?);
    let summary = FitSummary {
        steps: a.steps,
        initial_loss: r.initial_loss,
        best_loss: r.best_loss,
        loss_ratio: r.best_loss / r.initial_loss,
        initial_chamfer: c0,
        final_chamfer: c1,
        chamfer_ratio: c0 / c1,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "loss {:.5} -> {:.5} ({:.1}%), chamfer {:.3} -> {:.3}",
        summary.initial_loss,
        summary.best_loss,
        100.0 * summary.loss_ratio,
        c0,
        c1
    );
    Ok(())
}

/// Scenes of one split with their records.
fn load_split(dir: &Path, split: &str) -> Result<Vec<(SceneRecord, Scene)>> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    manifest
        .paths(dir, Some(split))
        .iter()
        .map(|p| {
            let rec = load_scene(p)?;
            let scene = rec.to_scene()?;
            Ok((rec, scene))
        })
        .collect()
}

fn shared_decoder<'a>(records: impl IntoIterator<Item = &'a SceneRecord>) -> Result<ElementDecoder> {
    let mut seed = None;
    for r in records {
        let s = r.decoder_seed();
        if *seed.get_or_insert(s) != s {
            bail!("scenes use different shape decoders ({} and {s})", seed.unwrap());
        }
    }
    Ok(ElementDecoder::seeded(seed.unwrap_or(DEFAULT_DECODER_SEED)))
}

#[derive(Serialize)]
struct RefineReport {
    trained: bool,
    steps: usize,
    train_scenes: usize,
    applied_scenes: usize,
    /// Batch losses of the first and last training steps.
    first_step: Option<LossReport>,
    last_step: Option<LossReport>,
    /// Mean joint loss of the refined split, when it has ground truth.
    applied: Option<LossReport>,
}

fn refine_cmd(seed: u64, a: &RefineArgs) -> Result<()> {
    let apply = load_split(&a.data, &a.apply_split)?;
    if apply.is_empty() {
        bail!("no scenes tagged {:?} in {}", a.apply_split, a.data.display());
    }
    let mut train_config = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed,
        ..TrainConfig::default()
    };
    if let Some(v) = a.lambda_phy {
        train_config.loss.physical = v;
    }
    if let Some(v) = a.lambda_co {
        train_config.loss.cooperative = v;
    }
    if let Some(v) = a.k {
        train_config.loss.k = v;
    }

    let (network, weights, train, curve) = match &a.checkpoint {
        Some(path) => {
            let c = read_checkpoint(path)?;
            (Network::new(c.config, c.codec), c.weights, Vec::new(), Vec::new())
        }
        None => {
            let train = load_split(&a.data, &a.train_split)?;
            if train.is_empty() {
                bail!("no scenes tagged {:?} in {}", a.train_split, a.data.display());
            }
            let dims = FeatureDims::from_scenes(train.iter().chain(&apply).map(|(_, s)| s))?;
            let mut config = SgcnConfig::new(dims);
            config.d = a.width;
            config.head_hidden = a.head_hidden;
            let network = Network::new(config, ParamCodec::default());
            let init = SgcnWeights::init(&network.config, &network.codec, seed);
            let decoder = shared_decoder(train.iter().map(|(r, _)| r))?;
            let scenes: Vec<Scene> = train.iter().map(|(_, s)| s.clone()).collect();
            let outcome = train_sgcn(&network, init, &scenes, &decoder, &ProjectedBoundsLoss, &train_config)?;
            (network, outcome.weights, train, outcome.curve)
        }
    };

    create_dir(&a.out.join("scenes"))?;
    let mut entries = Vec::with_capacity(apply.len());
    let mut refined_scenes = Vec::with_capacity(apply.len());
    for (i, (rec, scene)) in apply.iter().enumerate() {
        let refined: SceneState = refine(&network, &weights, &scene.estimate)?;
        debug_assert_eq!(refined.objects.len(), scene.estimate.objects.len());
        let out_scene = Scene {
            estimate: refined,
            ground_truth: scene.ground_truth.clone(),
        };
        let name = rec.name.clone().unwrap_or_else(|| format!("scene_{i:04}"));
        let rel = PathBuf::from("scenes").join(format!("{name}.json"));
        save_scene(
            &a.out.join(&rel),
            &SceneRecord::from_scene(&out_scene, Some(name), rec.decoder_seed),
        )?;
        entries.push(ManifestEntry {
            path: rel,
            split: a.apply_split.clone(),
        });
        refined_scenes.push(out_scene);
    }
    let manifest = DatasetManifest {
        scenes: entries,
        seed: None,
        generator: None,
        mean_initial_iou: None,
    };
    fs::write(a.out.join(MANIFEST_FILE), manifest.to_json())?;

    let with_gt: Vec<Scene> = apply
        .iter()
        .filter(|(_, s)| s.ground_truth.is_some())
        .map(|(_, s)| s.clone())
        .collect();
    let applied = if with_gt.is_empty() {
        None
    } else {
        let decoder = shared_decoder(apply.iter().map(|(r, _)| r))?;
        Some(evaluate_loss(&network, &weights, &with_gt, &decoder, &ProjectedBoundsLoss, &train_config)?)
    };
    let report = RefineReport {
        trained: a.checkpoint.is_none(),
        steps: curve.len(),
        train_scenes: train.len(),
        applied_scenes: apply.len(),
        first_step: curve.first().map(|r| r.loss),
        last_step: curve.last().map(|r| r.loss),
        applied,
    };
    write_json(&a.out.join("loss_report.json"), &report)?;
    let mut csv = String::from("step,lr,len,odn,co,phy,total\n");
    for r in &curve {
        let l = &r.loss;
        csv.push_str(&format!("{},{},{},{},{},{},{}\n", r.step, r.lr, l.len, l.odn, l.co, l.phy, l.total));
    }
    fs::write(a.out.join("train_curve.csv"), csv)?;
    write_checkpoint(
        &a.out.join("checkpoint.isgw"),
        &Checkpoint {
            config: network.config,
            codec: network.codec.clone(),
            weights,
        },
    )?;
    println!(
        "refined {} scenes into {}",
        refined_scenes.len(),
        a.out.join("scenes").display()
    );
    Ok(())
}

fn mesh_cmd(a: &MeshArgs) -> Result<()> {
    if a.resolution < 2 {
        bail!("resolution must be at least 2");
    }
    create_dir(&a.out)?;
    let grid = GridSpec::cube(a.resolution);
    let written: Vec<usize> = a
        .scenes
        .par_iter()
        .map(|path| -> Result<usize> {
            let rec = load_scene(path)?;
            let scene = rec.to_scene()?;
            let state = match a.state {
                Which::Estimate => &scene.estimate,
                Which::GroundTruth => scene
                    .ground_truth
                    .as_ref()
                    .with_context(|| format!("{} has no ground truth", path.display()))?,
            };
            let decoder = ElementDecoder::seeded(rec.decoder_seed());
            let fields = state.fields(&decoder)?;
            let poses = state.poses()?;
            let stem = path.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned());
            for (i, (f, p)) in fields.iter().zip(&poses).enumerate() {
                let mesh = extract_world_shape(f, p, &grid)?;
                let category = state.objects[i].category();
                let label = CATEGORY_NAMES.get(category).map_or(format!("cat{category}"), |s| s.to_string());
                let ext = match a.format {
                    MeshFormat::Obj => "obj",
                    MeshFormat::Ply => "ply",
                };
                let file = a.out.join(format!("{stem}_{i:02}_{label}.{ext}"));
                let mut w = BufWriter::new(File::create(&file).with_context(|| format!("creating {}", file.display()))?);
                match a.format {
                    MeshFormat::Obj => mesh.write_obj(&mut w)?,
                    MeshFormat::Ply => mesh.write_ply(&mut w)?,
                }
                w.flush()?;
            }
            Ok(fields.len())
        })
        .collect::<Result<_>>()?;
    println!("wrote {} meshes to {}", written.iter().sum::<usize>(), a.out.display());
    Ok(())
}

fn scene_files(inputs: &[PathBuf], split: Option<&str>) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let manifest = p.join(MANIFEST_FILE);
            if manifest.is_file() {
                out.extend(DatasetManifest::load(&manifest)?.paths(p, split));
            } else {
                let mut files: Vec<PathBuf> = fs::read_dir(p)
                    .with_context(|| format!("listing {}", p.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| f.extension().is_some_and(|e| e == "json"))
                    .collect();
                files.sort();
                out.extend(files);
            }
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let files = scene_files(&a.inputs, a.split.as_deref())?;
    if files.is_empty() {
        bail!("no scene files found");
    }
    let records: Vec<SceneRecord> = files.par_iter().map(|p| load_scene(p)).collect::<Result<_, _>>()?;
    let mut preds = Vec::with_capacity(records.len());
    let mut gts = Vec::with_capacity(records.len());
    for (rec, path) in records.iter().zip(&files) {
        let s = rec.to_scene()?;
        let gt = s
            .ground_truth
            .with_context(|| format!("{} has no ground truth", path.display()))?;
        preds.push(s.estimate);
        gts.push(gt);
    }
    let decoder = shared_decoder(&records)?;
    let config = MetricConfig {
        iou_thresh: a.iou_thresh,
        voxel: a.voxel,
        ..MetricConfig::default()
    };
    let report = evaluate(&preds, &gts, &decoder, &config)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("metrics.json"), &report)?;
        fs::write(dir.join("ap.csv"), report.ap_csv())?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn gradcheck_cmd(seed: u64, a: &GradcheckArgs) -> Result<bool> {
    let loaded = match &a.scene {
        Some(p) => {
            let rec = load_scene(p)?;
            Some((rec.to_scene()?, ElementDecoder::seeded(rec.decoder_seed())))
        }
        None => None,
    };
    let reports: Vec<SuiteReport> = gradcheck::run_all(a.configs, seed, loaded.as_ref().map(|(s, d)| (s, d)))?;
    for r in &reports {
        println!(
            "{:<22} {} configs={} checked={} skipped={} max_error={:.3e} tol={:.0e}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.configs,
            r.checked,
            r.skipped,
            r.max_error,
            r.tolerance
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &reports)?;
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Gen(a) => gen(seed, a).map(|_| true),
        Command::FitShape(a) => fit(seed, a).map(|_| true),
        Command::Refine(a) => refine_cmd(seed, a).map(|_| true),
        Command::Mesh(a) => mesh_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(seed, a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! The `stwarp` command-line driver.
//!
//! Every subcommand writes its artifacts under `--out` together with a
//! [`RunManifest`] recording the arguments, configuration and artifact
//! hashes. Exit codes: 0 on success, 1 when a verification fails, 2 on
//! usage errors, missing inputs or malformed files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::compose_camera_transform;
use crate::io::{write_atomic, write_json, write_ppm, write_trajectory, Dataset};
use crate::metrics::{ClassWeights, IouReport};
use crate::nn::{Checkpoint, Precision};
use crate::odometry::{OdometryReading, PoseSource};
use crate::pipeline::{
    build_model, evaluate, train_toy, EvalConfig, Model, ModelConfig, PoseProvider, SequenceSpec, Split, Subset,
    TrainConfig, Variant,
};
use crate::raster::RgbImage;
use crate::sequencing::Spacing;
use crate::synthscene::{generate_sequence, Preset, SceneConfig};
use crate::verify::{gradient_suite, primitive_suite, SuiteEntry};
use crate::warp::register_prior;

#[derive(Debug, Parser)]
#[command(name = "stwarp", version, about = "Spatial-temporal feature registration and fusion toolkit")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Checkpoint storage precision (`f32` or `f64`).
    #[arg(long, global = true, default_value = "f32")]
    pub precision: Precision,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic RGB-D field sequence.
    Synth(SynthArgs),
    /// Register one frame into another and write a PPM visualization.
    Register(RegisterArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Train a segmentation variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Refine wheel odometry with depth ICP.
    RefineOdom(RefineArgs),
    /// Framerate or odometry ablation over several checkpoints.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "sb")]
    pub preset: Preset,
    #[arg(long, default_value_t = 600)]
    pub frames: usize,
    /// Image width, overriding the preset.
    #[arg(long)]
    pub width: Option<usize>,
    /// Image height, overriding the preset.
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct RegisterArgs {
    /// Dataset directory.
    #[arg(long, env = "STWARP_DATA")]
    pub seq: PathBuf,
    #[arg(long)]
    pub from: usize,
    #[arg(long)]
    pub to: usize,
    /// Pose source: `gt`, `wheel` or `refined`.
    #[arg(long, default_value = "gt")]
    pub poses: PoseSource,
    /// Register at 1/scale resolution (1, 2 or 4).
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Include the fusion cells and the full pipeline, not only primitives.
    #[arg(long)]
    pub all: bool,
    /// Elements checked per pipeline tensor.
    #[arg(long, default_value_t = 12)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub variant: Variant,
    #[arg(long, env = "STWARP_DATA")]
    pub data: PathBuf,
    #[arg(long, default_value = "regular")]
    pub spacing: Spacing,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub sequence_length: usize,
    #[arg(long, default_value_t = 6)]
    pub delta_max: usize,
    #[arg(long, default_value = "gt")]
    pub poses: PoseSource,
    #[arg(long, default_value_t = 5)]
    pub validate_every: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, env = "STWARP_DATA")]
    pub data: PathBuf,
    #[arg(long, default_value = "regular")]
    pub spacing: Spacing,
    #[arg(long, default_value = "test")]
    pub subset: Subset,
    #[arg(long, default_value = "gt")]
    pub poses: PoseSource,
    /// Report path; defaults to `--out`, then standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RefineArgs {
    #[arg(long, env = "STWARP_DATA")]
    pub seq: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["framerate", "odometry"])))]
pub struct AblateArgs {
    /// Evaluate every checkpoint under regular and random spacing.
    #[arg(long)]
    pub framerate: bool,
    /// Evaluate every checkpoint under ground-truth, wheel and refined poses.
    #[arg(long)]
    pub odometry: bool,
    /// Checkpoints to compare (repeatable).
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long, env = "STWARP_DATA")]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub subset: Subset,
    /// Spacing used in odometry mode.
    #[arg(long, default_value = "regular")]
    pub spacing: Spacing,
}

/// Record of one run, written next to its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: u64,
    /// SHA-256 of every artifact, keyed by path relative to the output.
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_s: f64,
    pub version: String,
}

/// How a run ended short of an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_tree(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.insert(rel, hash_file(&p)?);
        }
    }
    Ok(())
}

struct Run<'a> {
    cli: &'a Cli,
    argv: Vec<String>,
    start: Instant,
}

impl Run<'_> {
    fn out(&self, what: &str) -> Result<&Path> {
        self.cli
            .out
            .as_deref()
            .ok_or_else(|| Error::Config(format!("--out is required ({what})")))
    }

    /// Writes the manifest for a directory of artifacts.
    fn finish_dir(&self, command: &str, config: Value, dir: &Path) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        hash_tree(dir, dir, &mut artifacts)?;
        self.write_manifest(command, config, artifacts, &dir.join("manifest.json"))
    }

    /// Writes the manifest for single-file artifacts as `<first>.manifest.json`.
    fn finish_files(&self, command: &str, config: Value, files: &[&Path]) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for f in files {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            artifacts.insert(name, hash_file(f)?);
        }
        let Some(first) = files.first() else { return Ok(()) };
        let mut path = first.as_os_str().to_owned();
        path.push(".manifest.json");
        self.write_manifest(command, config, artifacts, Path::new(&path))
    }

    fn write_manifest(&self, command: &str, config: Value, artifacts: BTreeMap<String, String>, path: &Path) -> Result<()> {
        let m = RunManifest {
            command: command.to_string(),
            argv: self.argv.clone(),
            config,
            seed: self.cli.seed,
            artifacts,
            wall_clock_s: self.start.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_json(path, &m)
    }
}

fn global_config(cli: &Cli) -> Value {
    json!({
        "seed": cli.seed,
        "threads": cli.threads,
        "precision": cli.precision,
    })
}

fn with_globals(cli: &Cli, args: &impl Serialize) -> Result<Value> {
    let mut v = serde_json::to_value(args)?;
    v["global"] = global_config(cli);
    Ok(v)
}

fn load_checkpoint(path: &Path) -> Result<(Model, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let model = Model::from_checkpoint(&ckpt)?;
    Ok((model, ckpt))
}

fn checkpoint_weights(ckpt: &Checkpoint) -> Option<ClassWeights> {
    ckpt.meta.get("class_weights").and_then(|v| serde_json::from_value(v.clone()).ok())
}

fn checkpoint_spacing(ckpt: &Checkpoint) -> Option<Spacing> {
    ckpt.meta
        .get("train")
        .and_then(|t| t.get("spacing"))
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

fn checkpoint_sequence_length(ckpt: &Checkpoint) -> usize {
    ckpt.meta
        .get("train")
        .and_then(|t| t.get("sequence_length"))
        .and_then(Value::as_u64)
        .map_or(SequenceSpec::default().length, |n| n as usize)
}

fn cmd_synth(run: &Run, a: &SynthArgs) -> Result<Outcome> {
    let out = run.out("dataset directory")?;
    let mut cfg = SceneConfig::preset(a.preset, a.frames, run.cli.seed);
    cfg.image_w = a.width.unwrap_or(cfg.image_w);
    cfg.image_h = a.height.unwrap_or(cfg.image_h);
    let ds = generate_sequence(cfg.clone(), out)?;
    log::info!("wrote {} frames ({} labeled) to {}", ds.len(), ds.labels.len(), out.display());
    run.finish_dir("synth", json!({ "args": with_globals(run.cli, a)?, "scene": cfg }), out)?;
    Ok(Outcome::Success)
}

fn cmd_register(run: &Run, a: &RegisterArgs) -> Result<Outcome> {
    let out = run.out("PPM path")?;
    let ds = Dataset::load(&a.seq)?;
    for i in [a.from, a.to] {
        if i >= ds.len() {
            return Err(Error::Config(format!("frame {i} outside the {}-frame dataset", ds.len())));
        }
    }
    if ![1, 2, 4].contains(&a.scale) || ds.intrinsics.width % a.scale != 0 || ds.intrinsics.height % a.scale != 0 {
        return Err(Error::Config(format!("scale {} does not divide the image", a.scale)));
    }
    let poses = PoseProvider::new(&ds, a.poses)?.poses(&[a.from, a.to])?;
    let tc = compose_camera_transform(&poses[0].inverse().compose(&poses[1]), &ds.extrinsics);
    let src = ds.frames[a.from].rgb.to_feature_map();
    let src = if a.scale == 1 {
        src
    } else {
        let t = crate::nn::Tensor4::from_map(&src);
        let mut t = crate::nn::ops::avg_pool2(&t)?;
        if a.scale == 4 {
            t = crate::nn::ops::avg_pool2(&t)?;
        }
        t.to_map(0)
    };
    let reg = register_prior(&src, &ds.frames[a.from].depth, &tc, &ds.intrinsics)?;
    let (h, w) = (reg.map.height(), reg.map.width());
    let mut img = RgbImage::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let px = if reg.hit_mask[y * w + x] {
                let c = |ch: usize| (reg.map.get(ch, y, x) * 255.0).round().clamp(0.0, 255.0) as u8;
                [c(0), c(1), c(2)]
            } else {
                [255, 0, 255]
            };
            img.set(y, x, px);
        }
    }
    write_ppm(out, &img)?;
    let hits = reg.hit_mask.iter().filter(|&&m| m).count();
    println!("registered frame {} into frame {}: {hits}/{} pixels hit", a.from, a.to, h * w);
    run.finish_files("register", with_globals(run.cli, a)?, &[out])?;
    Ok(Outcome::Success)
}

fn print_suite(entries: &[SuiteEntry]) {
    for e in entries {
        println!(
            "{:<20} max rel err {:.3e}  (< {:.0e})  {}",
            e.name,
            e.report.max_rel_error,
            e.tolerance,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
}

fn cmd_gradcheck(run: &Run, a: &GradcheckArgs) -> Result<Outcome> {
    let entries = if a.all {
        let mut e = gradient_suite(run.cli.seed)?;
        if a.samples != 12 {
            e.pop();
            e.extend(crate::verify::pipeline_suite(run.cli.seed, a.samples)?);
        }
        e
    } else {
        primitive_suite(run.cli.seed)?
    };
    print_suite(&entries);
    if let Some(out) = &run.cli.out {
        write_json(out, &entries)?;
        run.finish_files("gradcheck", with_globals(run.cli, a)?, &[out])?;
    }
    Ok(if entries.iter().all(|e| e.passed) {
        Outcome::Success
    } else {
        Outcome::VerificationFailed
    })
}

fn cmd_train(run: &Run, a: &TrainArgs) -> Result<Outcome> {
    let out = run.out("checkpoint directory")?;
    let ds = Dataset::load(&a.data)?;
    let split = Split::along_trajectory(&ds, a.sequence_length)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: run.cli.seed,
        sequence_length: a.sequence_length,
        spacing: a.spacing,
        delta_max: a.delta_max,
        validate_every: a.validate_every,
        pose_source: a.poses,
        precision: run.cli.precision,
        ..Default::default()
    };
    let classes = ds
        .labels
        .values()
        .flat_map(|l| l.data.iter().copied())
        .max()
        .map_or(3, |m| (m as usize + 1).max(3));
    let model = build_model(&ModelConfig::new(a.variant, classes), run.cli.seed)?;
    let outcome = train_toy(model, &ds, &split.train, &split.val, &tc)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let meta = json!({
        "train": tc,
        "split": split,
        "class_weights": outcome.class_weights,
        "best_epoch": outcome.best_epoch,
        "best_val_miou": outcome.best_val_miou,
    });
    outcome
        .model
        .to_checkpoint(run.cli.precision, meta)?
        .save(&out.join("model.ckpt"))?;
    let mut log = csv::Writer::from_writer(Vec::new());
    log.write_record(["epoch", "lr", "loss", "val_miou"]).map_err(csv_err)?;
    for r in &outcome.log {
        log.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.lr),
            format!("{:.6}", r.loss),
            r.val_miou.map(|m| format!("{m:.4}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    write_atomic(&out.join("train_log.csv"), &log.into_inner().map_err(|e| csv_err(e.into_error()))?)?;
    println!(
        "{}: best val mIoU {:.2} at epoch {}",
        a.variant, outcome.best_val_miou, outcome.best_epoch
    );
    run.finish_dir("train", json!({ "args": with_globals(run.cli, a)?, "train": tc }), out)?;
    Ok(Outcome::Success)
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn eval_one(
    model: &Model,
    ckpt: &Checkpoint,
    ds: &Dataset,
    indices: &[usize],
    spacing: Spacing,
    poses: PoseSource,
    cli: &Cli,
) -> Result<(IouReport, usize)> {
    let cfg = EvalConfig {
        sequence: SequenceSpec {
            length: checkpoint_sequence_length(ckpt),
            spacing,
            ..Default::default()
        },
        pose_source: poses,
        seed: cli.seed,
        threads: cli.threads,
    };
    let r = evaluate(model, ds, indices, &cfg, checkpoint_weights(ckpt).as_ref())?;
    Ok((r.iou, r.samples))
}

fn cmd_eval(run: &Run, a: &EvalArgs) -> Result<Outcome> {
    let (model, ckpt) = load_checkpoint(&a.ckpt)?;
    let ds = Dataset::load(&a.data)?;
    let split = Split::along_trajectory(&ds, checkpoint_sequence_length(&ckpt))?;
    let (iou, samples) = eval_one(&model, &ckpt, &ds, split.subset(a.subset), a.spacing, a.poses, run.cli)?;
    let report = json!({
        "variant": model.config.variant,
        "per_class_iou": iou.per_class_iou,
        "miou": iou.miou,
        "wiou": iou.wiou,
        "samples": samples,
        "config": with_globals(run.cli, a)?,
    });
    println!("{} {}: mIoU {:.2}  wIoU {:.2}  ({samples} samples)", model.config.variant, a.spacing, iou.miou, iou.wiou);
    match a.report.as_deref().or(run.cli.out.as_deref()) {
        Some(path) => {
            write_json(path, &report)?;
            run.finish_files("eval", report["config"].clone(), &[path])?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(Outcome::Success)
}

fn cmd_refine(run: &Run, a: &RefineArgs) -> Result<Outcome> {
    let out = run.out("trajectory path")?;
    let ds = Dataset::load(&a.seq)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let poses = PoseProvider::new(&ds, PoseSource::Refined)?.poses(&all)?;
    let readings: Vec<OdometryReading> = ds
        .timestamps
        .iter()
        .zip(poses)
        .map(|(&timestamp, pose)| OdometryReading { timestamp, pose })
        .collect();
    write_trajectory(out, &readings)?;
    run.finish_files("refine-odom", with_globals(run.cli, a)?, &[out])?;
    Ok(Outcome::Success)
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub train_spacing: String,
    pub test_spacing: Spacing,
    pub pose_source: PoseSource,
    pub miou: f64,
    pub wiou: f64,
}

fn cmd_ablate(run: &Run, a: &AblateArgs) -> Result<Outcome> {
    let out = run.out("CSV path")?;
    let ds = Dataset::load(&a.data)?;
    let mut rows = Vec::new();
    for path in &a.ckpt {
        let (model, ckpt) = load_checkpoint(path)?;
        let split = Split::along_trajectory(&ds, checkpoint_sequence_length(&ckpt))?;
        let indices = split.subset(a.subset);
        let train_spacing = checkpoint_spacing(&ckpt).map_or_else(|| "unknown".to_string(), |s| s.to_string());
        let settings: Vec<(Spacing, PoseSource)> = if a.framerate {
            vec![(Spacing::Regular, PoseSource::GroundTruth), (Spacing::Random, PoseSource::GroundTruth)]
        } else {
            [PoseSource::GroundTruth, PoseSource::Wheel, PoseSource::Refined]
                .into_iter()
                .map(|p| (a.spacing, p))
                .collect()
        };
        for (spacing, poses) in settings {
            let (iou, _) = eval_one(&model, &ckpt, &ds, indices, spacing, poses, run.cli)?;
            rows.push(AblationRow {
                variant: model.config.variant,
                train_spacing: train_spacing.clone(),
                test_spacing: spacing,
                pose_source: poses,
                miou: iou.miou,
                wiou: iou.wiou,
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        println!(
            "{:<8} train {:<8} test {:<8} poses {:<12} mIoU {:.2}",
            r.variant.to_string(),
            r.train_spacing,
            r.test_spacing.to_string(),
            r.pose_source.to_string(),
            r.miou
        );
        w.serialize(r).map_err(csv_err)?;
    }
    write_atomic(out, &w.into_inner().map_err(|e| csv_err(e.into_error()))?)?;
    run.finish_files("ablate", with_globals(run.cli, a)?, &[out])?;
    Ok(Outcome::Success)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli, argv: Vec<String>) -> Result<Outcome> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let run = Run {
        cli,
        argv,
        start: Instant::now(),
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&run, a),
        Command::Register(a) => cmd_register(&run, a),
        Command::Gradcheck(a) => cmd_gradcheck(&run, a),
        Command::Train(a) => cmd_train(&run, a),
        Command::Eval(a) => cmd_eval(&run, a),
        Command::RefineOdom(a) => cmd_refine(&run, a),
        Command::Ablate(a) => cmd_ablate(&run, a),
    }
}

/// Parses `argv`, runs it and maps the result to the process exit code.
pub fn main_with_args(argv: Vec<String>) -> ExitCode {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli, argv) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("stwarp").chain(args.iter().copied()))
    }

    #[test]
    fn eval_requires_checkpoint() {
        let e = parse(&["eval", "--data", "x"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn ablate_requires_a_mode() {
        assert!(parse(&["ablate", "--ckpt", "a", "--data", "x"]).is_err());
        assert!(parse(&["ablate", "--framerate", "--odometry", "--ckpt", "a", "--data", "x"]).is_err());
        assert!(parse(&["ablate", "--framerate", "--ckpt", "a", "--ckpt", "b", "--data", "x"]).is_ok());
    }

    #[test]
    fn global_flags_follow_subcommands() {
        let c = parse(&["train", "--variant", "st-atte", "--data", "d", "--seed", "7", "--out", "ck", "--precision", "f64"])
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.precision, Precision::F64);
        assert_eq!(c.out.as_deref(), Some(Path::new("ck")));
        assert!(parse(&["train", "--variant", "xx", "--data", "d"]).is_err());
    }

    #[test]
    fn missing_dataset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = parse(&["refine-odom", "--seq", dir.path().join("none").to_str().unwrap(), "--out", "t.txt"]).unwrap();
        assert!(run(&c, vec![]).is_err());
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}

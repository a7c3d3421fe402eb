//! The `vqs` command line.
//!
//! Every subcommand that writes an output also writes `<output>.run.json`
//! (for `gen`, `<out>/run.json`) holding the resolved options, their digest
//! and the digests of the inputs. Failures print one JSON line
//! `{"error": <kind>, "message": ...}` on stderr. Exit codes: 0 success,
//! 1 runtime or validation failure, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask::ResponseSet;
use crate::metrics::{evaluate_run, report_csv, report_json, SubsetBounds};
use crate::numerics::{primitive_suite, AdamWConfig, GradCheckReport, ParamStore};
use crate::par::{self, Execution};
use crate::pipeline::{infer_video, init_params, PipelineConfig, PredictionManifest, Query};
use crate::synth::dataset::{
    dataset_root, generate_dataset, load_frames, load_gt, load_query, verify_digest,
    DatasetManifest, SceneDistribution,
};
use crate::synth::stats::{compute_stats, stats_csv, stats_json};
use crate::synth::validate::validate_dataset;
use crate::training::{composed_gradcheck, curve_csv, overfit_train, Example, TrainConfig};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug, Serialize)]
#[command(name = "vqs", version, about = "Visual query segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Run the pipeline over a dataset and write predictions.
    Infer(InferArgs),
    /// Overfit a fresh model on one scene.
    Train(TrainArgs),
    /// Evaluate predictions against a dataset's ground truth.
    Eval(EvalArgs),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Check a dataset for invariant violations.
    Validate(ValidateArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 64x64 frames, 48-96 frames per video.
    Default,
    /// Short videos whose mean target areas cover every area subset.
    Subsets,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PipelineArgs {
    /// Refinement stages K.
    #[arg(long = "stages", default_value_t = 2)]
    pub stages: usize,
    /// Frames per clip L.
    #[arg(long = "clip-len", default_value_t = 7)]
    pub clip_len: usize,
    /// Target memories kept per stage.
    #[arg(long = "nt", default_value_t = 2)]
    pub n_t: usize,
    /// Distractor memories kept per stage.
    #[arg(long = "nd", default_value_t = 1)]
    pub n_d: usize,
    /// Target score threshold.
    #[arg(long = "tau-t", default_value_t = 0.5)]
    pub tau_t: f64,
    /// Distractor divergence threshold.
    #[arg(long = "tau-d", default_value_t = 0.5)]
    pub tau_d: f64,
    /// Distractor score threshold.
    #[arg(long = "tau-s", default_value_t = 0.7)]
    pub tau_s: f64,
    /// Stage loss weights, comma separated.
    #[arg(long = "gamma", value_delimiter = ',', default_value = "0.5,1.0")]
    pub gamma: Vec<f64>,
    /// Patch side in pixels.
    #[arg(long = "patch-size", default_value_t = 8)]
    pub patch_size: usize,
    /// Feature width d.
    #[arg(long = "model-dim", default_value_t = 32)]
    pub model_dim: usize,
    /// Attention heads.
    #[arg(long = "heads", default_value_t = 2)]
    pub heads: usize,
}

impl PipelineArgs {
    pub fn config(&self, seed: u64) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            stages: self.stages,
            clip_len: self.clip_len,
            candidates: crate::pipeline::CANDIDATES,
            n_t: self.n_t,
            n_d: self.n_d,
            tau_t: self.tau_t,
            tau_d: self.tau_d,
            tau_s: self.tau_s,
            patch_size: self.patch_size,
            model_dim: self.model_dim,
            heads: self.heads,
            gamma: self.gamma.clone(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Scene distribution as JSON; overrides --preset.
    #[arg(long)]
    pub dist: Option<PathBuf>,
    /// Frame size as HxW for every scene.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    /// Frames per video as MIN-MAX.
    #[arg(long, value_parser = parse_range)]
    pub frames: Option<(usize, usize)>,
    /// Occurrences per video as MIN-MAX.
    #[arg(long, value_parser = parse_range)]
    pub occurrences: Option<(usize, usize)>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint; without one, fresh parameters from --seed are used.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Prediction manifest to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Scene id; defaults to the first scene.
    #[arg(long)]
    pub scene: Option<String>,
    /// Checkpoint to write; the loss curve goes to `<out>.curve.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 5e-6)]
    pub lr: f64,
    #[arg(long = "weight-decay", default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long = "log-interval", default_value_t = 1)]
    pub log_interval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Dataset directory holding the ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction manifest.
    #[arg(long)]
    pub pred: PathBuf,
    /// Report path; JSON there and CSV next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long = "small-max", default_value_t = 3.6e3)]
    pub small_max: f64,
    #[arg(long = "medium-max", default_value_t = 4.0e4)]
    pub medium_max: f64,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Violations as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GradcheckArgs {
    /// Entries sampled per parameter.
    #[arg(long = "per-param", default_value_t = 30)]
    pub per_param: usize,
    #[arg(long, default_value_t = 4)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    Ok((
        h.trim().parse().map_err(|e| format!("height: {e}"))?,
        w.trim().parse().map_err(|e| format!("width: {e}"))?,
    ))
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

/// Written next to every output.
#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    /// SHA-256 of the serialized `command`.
    config_digest: String,
    inputs: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &std::fs::read(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_sidecar(path: &Path, command: &Command, inputs: Vec<(String, String)>) -> Result<()> {
    let config = serde_json::to_string(command)?;
    let record = RunRecord {
        tool: "vqs",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_digest: sha256_hex(config.as_bytes()),
        inputs,
    };
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    write(path, &text)
}

struct Io<'a> {
    out: &'a mut dyn Write,
}

impl Io<'_> {
    fn print(&mut self, text: &str) -> Result<()> {
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    }
}

/// Outcome of a subcommand that did not fail outright.
enum Outcome {
    Ok,
    /// Validation-style failure; exit code 1 after the report was printed.
    Failed(String),
}

/// Parses `argv` (including the program name) and runs one subcommand.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = write!(err, "{e}");
            let line = serde_json::json!({"error": "usage", "message": e.kind().to_string()});
            let _ = writeln!(err, "{line}");
            return 2;
        }
    };
    let mut io = Io { out };
    match dispatch(&cli.command, &mut io) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Failed(message)) => {
            let line = serde_json::json!({"error": "validation", "message": message});
            let _ = writeln!(err, "{line}");
            1
        }
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            let _ = writeln!(err, "{line}");
            1
        }
    }
}

fn dispatch(command: &Command, io: &mut Io) -> Result<Outcome> {
    match command {
        Command::Gen(a) => gen(command, a, io),
        Command::Infer(a) => infer(command, a, io),
        Command::Train(a) => train(command, a, io),
        Command::Eval(a) => eval(command, a, io),
        Command::Stats(a) => stats(command, a, io),
        Command::Validate(a) => validate(command, a, io),
        Command::Gradcheck(a) => gradcheck(command, a, io),
    }
}

fn distribution(a: &GenArgs) -> Result<SceneDistribution> {
    let mut dist = match &a.dist {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => match a.preset {
            Preset::Default => SceneDistribution::default(),
            Preset::Subsets => SceneDistribution::subset_spanning(),
        },
    };
    if let Some(s) = a.size {
        dist.frame_sizes = vec![s];
    }
    if let Some(f) = a.frames {
        dist.num_frames = f;
    }
    if let Some(o) = a.occurrences {
        dist.num_occurrences = o;
    }
    if let Some(fps) = a.fps {
        dist.fps = fps;
    }
    dist.validate()?;
    Ok(dist)
}

fn gen(command: &Command, a: &GenArgs, io: &mut Io) -> Result<Outcome> {
    let dist = distribution(a)?;
    let m = generate_dataset(
        &a.out,
        a.scenes,
        &dist,
        a.seed,
        Execution::from_jobs(a.jobs),
    )?;
    write_sidecar(
        &a.out.join("run.json"),
        command,
        vec![("distribution".into(), m.config_digest.clone())],
    )?;
    io.print(&format!(
        "wrote {} scenes to {} (content digest {})\n",
        m.scenes.len(),
        a.out.display(),
        m.content_digest
    ))?;
    Ok(Outcome::Ok)
}

fn open_dataset(path: &Path) -> Result<(PathBuf, DatasetManifest)> {
    let root = dataset_root(path);
    let m = DatasetManifest::read(path)?;
    Ok((root, m))
}

fn load_store(ckpt: Option<&Path>, cfg: &PipelineConfig) -> Result<ParamStore> {
    match ckpt {
        Some(p) => ParamStore::load(p),
        None => init_params(cfg),
    }
}

fn infer(command: &Command, a: &InferArgs, io: &mut Io) -> Result<Outcome> {
    let cfg = a.pipeline.config(a.seed)?;
    let store = load_store(a.ckpt.as_deref(), &cfg)?;
    let (root, m) = open_dataset(&a.data)?;
    let videos = par::try_map(Execution::from_jobs(a.jobs), &m.scenes, |_, e| {
        let frames = load_frames(&root, e)?;
        let (qf, qm) = load_query(&root, e)?;
        let query = Query {
            frame: &qf,
            mask: &qm,
        };
        infer_video(&store, &cfg, &e.id, &frames, query, Execution::Sequential)
    })?;
    let preds = PredictionManifest::new(cfg.digest(), store.digest(), a.seed, &videos);
    write(&a.out, &preds.to_json())?;
    let mut inputs = vec![("dataset".to_string(), m.content_digest.clone())];
    inputs.push(("checkpoint".to_string(), store.digest()));
    write_sidecar(&with_suffix(&a.out, ".run.json"), command, inputs)?;
    io.print(&format!(
        "wrote predictions for {} videos to {}\n",
        videos.len(),
        a.out.display()
    ))?;
    Ok(Outcome::Ok)
}

fn train(command: &Command, a: &TrainArgs, io: &mut Io) -> Result<Outcome> {
    let cfg = a.pipeline.config(a.seed)?;
    let (root, m) = open_dataset(&a.data)?;
    let entry = match &a.scene {
        Some(id) => m
            .scene(id)
            .ok_or_else(|| Error::Config(format!("no scene '{id}' in dataset")))?,
        None => m
            .scenes
            .first()
            .ok_or_else(|| Error::Empty("dataset has no scenes".into()))?,
    };
    let frames = load_frames(&root, entry)?;
    let (qf, qm) = load_query(&root, entry)?;
    let gt = load_gt(&root, entry)?;
    let tcfg = TrainConfig {
        steps: a.steps,
        adamw: AdamWConfig {
            lr: a.lr,
            weight_decay: a.weight_decay,
            ..Default::default()
        },
        gamma: cfg.gamma.clone(),
        log_interval: a.log_interval,
        seed: a.seed,
        ..Default::default()
    };
    let ex = Example {
        frames: &frames,
        query: Query {
            frame: &qf,
            mask: &qm,
        },
        gt: &gt,
    };
    let out = overfit_train(&cfg, &tcfg, ex, Execution::from_jobs(a.jobs))?;
    out.store.save(&a.out)?;
    write(&with_suffix(&a.out, ".curve.csv"), &curve_csv(&out.curve))?;
    write_sidecar(
        &with_suffix(&a.out, ".run.json"),
        command,
        vec![("dataset".into(), m.content_digest.clone())],
    )?;
    let first = out.curve.first().map_or(0.0, |p| p.loss.total);
    let last = out.curve.last().map_or(0.0, |p| p.loss.total);
    io.print(&format!(
        "trained {} steps on {}: loss {first:.6} -> {last:.6}\n",
        a.steps, entry.id
    ))?;
    Ok(Outcome::Ok)
}

fn eval(command: &Command, a: &EvalArgs, io: &mut Io) -> Result<Outcome> {
    let (root, m) = open_dataset(&a.gt)?;
    let gt = m
        .scenes
        .iter()
        .map(|e| load_gt(&root, e))
        .collect::<Result<Vec<ResponseSet>>>()?;
    let preds = PredictionManifest::read(&a.pred)?.responses()?;
    let bounds = SubsetBounds {
        small_max: a.small_max,
        medium_max: a.medium_max,
    };
    let run = evaluate_run(&gt, &preds, &bounds, Execution::from_jobs(a.jobs))?;
    let json = report_json(&run.report);
    let csv = report_csv(&run.report);
    if let Some(out) = &a.out {
        write(out, &json)?;
        write(&out.with_extension("csv"), &csv)?;
        let inputs = vec![
            ("gt".to_string(), m.content_digest.clone()),
            ("pred".to_string(), file_digest(&a.pred)?),
        ];
        write_sidecar(&with_suffix(out, ".run.json"), command, inputs)?;
    }
    io.print(match a.format {
        Format::Json => &json,
        Format::Csv => &csv,
    })?;
    Ok(Outcome::Ok)
}

fn stats(command: &Command, a: &StatsArgs, io: &mut Io) -> Result<Outcome> {
    let (root, m) = open_dataset(&a.data)?;
    let s = compute_stats(&root, &m)?;
    let json = stats_json(&s);
    let csv = stats_csv(&s);
    if let Some(out) = &a.out {
        write(out, &json)?;
        write(&out.with_extension("csv"), &csv)?;
        write_sidecar(
            &with_suffix(out, ".run.json"),
            command,
            vec![("dataset".into(), m.content_digest.clone())],
        )?;
    }
    io.print(match a.format {
        Format::Json => &json,
        Format::Csv => &csv,
    })?;
    Ok(Outcome::Ok)
}

fn validate(command: &Command, a: &ValidateArgs, io: &mut Io) -> Result<Outcome> {
    let violations = validate_dataset(&a.data);
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(&violations)?;
        text.push('\n');
        write(out, &text)?;
        let digest = DatasetManifest::read(&a.data)
            .map(|m| m.content_digest)
            .unwrap_or_default();
        write_sidecar(
            &with_suffix(out, ".run.json"),
            command,
            vec![("dataset".into(), digest)],
        )?;
    }
    for v in &violations {
        io.print(&format!("{v}\n"))?;
    }
    if violations.is_empty() {
        let (root, m) = open_dataset(&a.data)?;
        debug_assert!(verify_digest(&root, &m).unwrap_or(false));
        io.print(&format!("ok: {} scenes\n", m.scenes.len()))?;
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed(format!("{} violations", violations.len())))
    }
}

#[derive(Serialize)]
struct GradcheckLine<'a> {
    check: &'a str,
    passed: bool,
    #[serde(flatten)]
    report: &'a GradCheckReport,
}

fn gradcheck(command: &Command, a: &GradcheckArgs, io: &mut Io) -> Result<Outcome> {
    let mut reports: Vec<(String, GradCheckReport)> = primitive_suite(a.per_param)?
        .into_iter()
        .map(|(n, r)| (n.to_string(), r))
        .collect();
    for stages in [1, 2] {
        let r = composed_gradcheck(stages, a.per_param, a.seed)?;
        reports.push((format!("pipeline_{stages}_stage"), r));
    }
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (name, r) in &reports {
        let passed = r.max_rel_error < GRADCHECK_TOLERANCE;
        if !passed {
            failed.push(name.clone());
        }
        lines.push(serde_json::to_string(&GradcheckLine {
            check: name,
            passed,
            report: r,
        })?);
    }
    let text = lines.join("\n") + "\n";
    if let Some(out) = &a.out {
        write(out, &text)?;
        write_sidecar(&with_suffix(out, ".run.json"), command, Vec::new())?;
    }
    io.print(&text)?;
    if failed.is_empty() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

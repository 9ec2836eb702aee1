//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid config, 4 missing or unreadable
//! file, 5 malformed data, 6 training failure, 7 refusal to overwrite.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, read_manifest, write_manifest, Split};
use crate::error::Error;
use crate::metrics::MetricsReport;
use crate::model::{
    count_parameters, load_checkpoint, save_checkpoint, ModelConfig, DECODER_PRESETS, ENCODER_PRESETS,
};
use crate::training::{self, ablate, evaluate, grid_search, AblationTable, GridOutcome, TrainConfig};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_DATA: i32 = 5;
pub const EXIT_TRAINING: i32 = 6;
pub const EXIT_EXISTS: i32 = 7;

/// Environment variable holding the log filter, e.g. `info`.
pub const LOG_ENV: &str = "MEMEFIER_LOG";

#[derive(Parser, Debug)]
#[command(name = "memefier", version, about = "Multimodal meme classifier over precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration with optional [model], [train] and [grid] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a planted-rule synthetic manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Embedding width of images and text.
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        n_g: usize,
        #[arg(long, default_value_t = 2)]
        n_x: usize,
    },
    /// Train on a manifest's train split, selecting on its val split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Train the full model and the four single-removal variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the hyperparameter grid; finished points are cached.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Render tables from results in the output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter counts and greedy captions.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated sample ids to caption.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
}

/// Axes of the hyperparameter grid. Each defaults to the published values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridAxes {
    pub lr: Vec<f64>,
    pub epochs: Vec<usize>,
    pub alpha: Vec<f64>,
    pub d_model: Vec<usize>,
    /// `[heads, ff_dim, layers]`
    pub encoder: Vec<[usize; 3]>,
    /// `[dim, heads, ff_dim, layers]`
    pub decoder: Vec<[usize; 4]>,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            lr: vec![1e-4, 1e-5],
            epochs: vec![16, 32],
            alpha: vec![0.2, 0.8],
            d_model: vec![512, 1024],
            encoder: ENCODER_PRESETS.iter().map(|&(a, b, c)| [a, b, c]).collect(),
            decoder: DECODER_PRESETS.iter().map(|&(a, b, c, d)| [a, b, c, d]).collect(),
        }
    }
}

impl GridAxes {
    pub fn points(&self, model: &ModelConfig, train: &TrainConfig) -> Vec<(ModelConfig, TrainConfig)> {
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &epochs in &self.epochs {
                for &alpha in &self.alpha {
                    for &d_model in &self.d_model {
                        for &[h, f, l] in &self.encoder {
                            for &[dd, dh, df, dl] in &self.decoder {
                                let mut m = model.clone();
                                m.alpha = alpha;
                                m.d_model = d_model;
                                m.set_encoder_preset((h, f, l));
                                m.set_decoder_preset((dd, dh, df, dl));
                                let t = TrainConfig {
                                    lr,
                                    epochs,
                                    lr_drop_at: None,
                                    ..train.clone()
                                };
                                out.push((m, t));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Contents of the `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides `model.seed` and `train.seed`.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: GridAxes,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    fn apply_seed(&mut self, flag: Option<u64>) {
        if let Some(s) = flag.or(self.seed) {
            self.seed = Some(s);
            self.model.seed = s;
            self.train.seed = s;
        }
    }

    fn validate(&self) -> Result<(), Error> {
        self.model.clone().normalized().validate()?;
        self.train.validate()
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Io { .. } => EXIT_IO,
            Error::Divergence { .. } | Error::UndefinedMetric(_) => EXIT_TRAINING,
            Error::Shape(_)
            | Error::Input(_)
            | Error::Record { .. }
            | Error::SchemaVersion { .. }
            | Error::CheckpointVersion { .. }
            | Error::Json(_) => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Failures print one line to stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let rendered = e.render().to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("invalid arguments"));
            return EXIT_USAGE;
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return 0;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Synth {
            common,
            n,
            d,
            n_g,
            n_x,
        } => synth(&common, n, d, n_g, n_x),
        Command::Train { common, manifest } => train_cmd(&common, &manifest),
        Command::Eval {
            common,
            manifest,
            checkpoint,
            split,
        } => eval_cmd(&common, &manifest, &checkpoint, &split),
        Command::Ablate { common, manifest } => ablate_cmd(&common, &manifest),
        Command::Grid { common, manifest } => grid_cmd(&common, &manifest),
        Command::Report { out } => report_cmd(&out),
        Command::Inspect {
            checkpoint,
            config,
            manifest,
            ids,
        } => inspect_cmd(checkpoint.as_deref(), config.as_deref(), manifest.as_deref(), &ids),
    }
}

/// Loads and validates the config and creates the output directory.
fn prepare(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply_seed(common.seed);
    cfg.validate()?;
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(cfg)
}

/// Records the configuration a command actually ran with as
/// `<command>.config.toml` in the output directory.
fn echo_config(common: &Common, command: &str, cfg: &RunConfig) -> CliResult {
    let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&common.out.join(format!("{command}.config.toml")), text.as_bytes())
}

fn refuse_existing(common: &Common, outputs: &[&str]) -> CliResult {
    if common.force {
        return Ok(());
    }
    for name in outputs {
        let p = common.out.join(name);
        if p.exists() {
            return Err(Failure {
                code: EXIT_EXISTS,
                message: format!("{} exists; pass --force to overwrite", p.display()),
            });
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    crate::io::atomic_write(path, bytes).map_err(Failure::from)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn synth(common: &Common, n: usize, d: usize, n_g: usize, n_x: usize) -> CliResult {
    refuse_existing(common, &["manifest.jsonl"])?;
    let cfg = prepare(common)?;
    echo_config(common, "synth", &cfg)?;
    let seed = cfg.seed.unwrap_or(0);
    let manifest = generate_synthetic(n, d, n_g, n_x, seed)?;
    let path = common.out.join("manifest.jsonl");
    write_manifest(&manifest, &path)?;
    println!("wrote {} samples to {}", manifest.samples.len(), path.display());
    Ok(())
}

fn train_cmd(common: &Common, manifest_path: &Path) -> CliResult {
    refuse_existing(common, &["final.ckpt", "best.ckpt", "history.jsonl"])?;
    let mut cfg = prepare(common)?;
    let manifest = read_manifest(manifest_path)?;
    cfg.model.fit_to(&manifest);
    echo_config(common, "train", &cfg)?;
    let run = training::train(&cfg.model, &cfg.train, &manifest)?;
    save_checkpoint(&run.final_model, common.out.join("final.ckpt"))?;
    save_checkpoint(&run.best_model, common.out.join("best.ckpt"))?;
    run.history.save(common.out.join("history.jsonl"))?;
    let best = &run.history.epochs[run.best_epoch - 1];
    let mut report = best.val_metrics.clone();
    report.provenance = provenance(&manifest_path.display().to_string(), "val", run.best_epoch, cfg.train.seed);
    write_json(&common.out.join("metrics-val.json"), &report)?;
    println!("best epoch {} of {}", run.best_epoch, cfg.train.epochs);
    print!("{}", report.to_table());
    Ok(())
}

fn provenance(manifest: &str, split: &str, epoch: usize, seed: u64) -> std::collections::BTreeMap<String, String> {
    [
        ("manifest", manifest.to_string()),
        ("split", split.to_string()),
        ("epoch", epoch.to_string()),
        ("seed", seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn eval_cmd(common: &Common, manifest_path: &Path, checkpoint: &Path, split: &str) -> CliResult {
    let split: Split = split.parse()?;
    let name = format!("metrics-{split}.json");
    refuse_existing(common, &[name.as_str()])?;
    let mut cfg = prepare(common)?;
    let model = load_checkpoint(checkpoint)?;
    cfg.model = model.config().clone();
    echo_config(common, "eval", &cfg)?;
    let manifest = read_manifest(manifest_path)?;
    let samples = manifest.split(split);
    let mut report = evaluate(&model, &samples)?.report;
    report.provenance = [
        ("manifest".to_string(), manifest_path.display().to_string()),
        ("checkpoint".to_string(), checkpoint.display().to_string()),
        ("split".to_string(), split.to_string()),
    ]
    .into();
    report.validate()?;
    write_json(&common.out.join(&name), &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn ablate_cmd(common: &Common, manifest_path: &Path) -> CliResult {
    refuse_existing(common, &["ablation.json"])?;
    let mut cfg = prepare(common)?;
    let manifest = read_manifest(manifest_path)?;
    cfg.model.fit_to(&manifest);
    echo_config(common, "ablate", &cfg)?;
    let table = ablate(&cfg.model, &cfg.train, &manifest)?;
    write_json(&common.out.join("ablation.json"), &table)?;
    print!("{}", table.to_table());
    Ok(())
}

fn grid_cmd(common: &Common, manifest_path: &Path) -> CliResult {
    // Re-running is safe: finished points come from the cache.
    let mut cfg = prepare(common)?;
    let manifest = read_manifest(manifest_path)?;
    cfg.model.fit_to(&manifest);
    echo_config(common, "grid", &cfg)?;
    let points = cfg.grid.points(&cfg.model, &cfg.train);
    let cache = common.out.join("cache");
    if common.force && cache.exists() {
        std::fs::remove_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
    }
    let report = grid_search(&points, &manifest, Some(&cache))?;
    write_json(&common.out.join("grid.json"), &report.outcomes)?;
    print!("{}", report.to_table());
    Ok(())
}

fn report_cmd(out: &Path) -> CliResult {
    if !out.is_dir() {
        return Err(Error::io(out, std::io::Error::from(std::io::ErrorKind::NotFound)).into());
    }
    let mut text = String::new();
    let ablation = out.join("ablation.json");
    if ablation.exists() {
        let table: AblationTable = read_json(&ablation)?;
        let _ = writeln!(text, "Ablation (seed {})\n{}", table.seed, table.to_table());
    }
    let grid = out.join("grid.json");
    if grid.exists() {
        let outcomes: Vec<GridOutcome> = read_json(&grid)?;
        let report = training::GridReport { outcomes };
        let _ = writeln!(text, "Grid\n{}", report.to_table());
    }
    let mut metric_files: Vec<PathBuf> = std::fs::read_dir(out)
        .map_err(|e| Error::io(out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics-") && n.ends_with(".json"))
        })
        .collect();
    metric_files.sort();
    for p in metric_files {
        let report: MetricsReport = read_json(&p)?;
        let _ = writeln!(
            text,
            "{}\n{}",
            p.file_name().unwrap_or_default().to_string_lossy(),
            report.to_table()
        );
    }
    if text.is_empty() {
        return Err(Error::Input(format!("no results found in {}", out.display())).into());
    }
    print!("{text}");
    Ok(())
}

fn inspect_cmd(
    checkpoint: Option<&Path>,
    config: Option<&Path>,
    manifest: Option<&Path>,
    ids: &[String],
) -> CliResult {
    let model = match checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let counts = match (&model, config) {
        (Some(m), _) => m.count_parameters(),
        (None, cfg) => {
            let c = RunConfig::load(cfg)?.model.normalized();
            count_parameters(&c)?
        }
    };
    println!("parameters: {}", counts.total);
    for (module, n) in &counts.per_module {
        println!("  {module:<12} {n}");
    }
    if ids.is_empty() {
        return Ok(());
    }
    let (Some(model), Some(manifest_path)) = (model, manifest) else {
        return Err(Error::Input("captioning needs --checkpoint and --manifest".into()).into());
    };
    let manifest = read_manifest(manifest_path)?;
    for id in ids {
        let sample = manifest
            .sample(id)
            .ok_or_else(|| Error::Input(format!("no sample `{id}` in manifest")))?;
        let scores = model.forward(sample)?.head_scores;
        let mut line = format!("{id}:");
        for h in scores.iter() {
            let _ = write!(line, " {}={:.3?}", h.name, h.probs);
        }
        if model.config().ablations.no_caption {
            line.push_str(" (no caption decoder)");
        } else {
            let ids = model.greedy_caption(sample)?;
            let _ = write!(line, " caption=\"{}\"", manifest.caption_vocab.decode(&ids));
        }
        println!("{line}");
    }
    Ok(())
}

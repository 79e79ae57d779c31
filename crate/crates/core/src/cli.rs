//! Command-line front end: argument parsing, run configs and manifests.
//!
//! Settings are resolved in three layers: built-in defaults, then a JSON
//! config file (`--config`, which also accepts a manifest written by an
//! earlier run), then command-line flags.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mfalcon::{throughput_bench, write_bench_csv, CacheMode, ScoreRequest, Scorer};
use crate::model::{Model, ModelConfig};
use crate::sequence::{build_sequence, read_events_jsonl, read_movielens, sequentialize_users, Event};
use crate::stochastic_length::{format_sparsity_table, read_length_histogram, sparsity_table, SLPolicy, Selection};
use crate::synthetic::{file_sha256, read_dp_dataset, split_train_test, write_dp_dataset, DPConfig};
use crate::train::{evaluate, train, write_timeline_csv, Dataset, EvalConfig, EvalTargets, TrainConfig};
use crate::{Error, Result};

pub const VERSION: &str = env!("GENREC_VERSION");

#[derive(Debug, Parser)]
#[command(name = "genrec", version = VERSION, about = "Generative recommenders: data, training, evaluation and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Dirichlet-process dataset.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Score candidates for every user of an event log.
    Infer(InferArgs),
    /// Time naive, batched and cached candidate scoring.
    Bench(BenchArgs),
    /// Expected sparsity under Stochastic Length for a length histogram.
    SlReport(SlReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Infer(_) => "infer",
            Command::Bench(_) => "bench",
            Command::SlReport(_) => "sl-report",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run config, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the manifest (default: next to the main output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces the synthetic section of the config.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub num_items: Option<usize>,
    #[arg(long)]
    pub num_records: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Metric timeline CSV.
    #[arg(long)]
    pub timeline: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub shuffle: Option<bool>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub num_negatives: Option<usize>,
    /// Stochastic Length exponent; needs `--sl-max-len`.
    #[arg(long)]
    pub sl_alpha: Option<f64>,
    #[arg(long)]
    pub sl_max_len: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub targets: Option<TargetsArg>,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetsArg {
    Last,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CacheArg {
    Off,
    Request,
    Session,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Event log (JSON lines) holding the user histories.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// One candidate item id per line.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub bm: Option<usize>,
    #[arg(long, value_enum)]
    pub cache: Option<CacheArg>,
    /// Output JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Benchmark a trained model instead of a freshly initialized one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub bm: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SlReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSON lines of `{length, count}`.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub max_lens: Option<Vec<usize>>,
    /// Table cells as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Decided from the file contents.
    #[default]
    Auto,
    /// Synthetic records written by `generate`.
    Dp,
    /// JSON-lines event log.
    Events,
    /// MovieLens ratings (`::` or comma separated).
    Movielens,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub timeline: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub histogram: Option<PathBuf>,
    /// Main output of eval, infer, bench and sl-report.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub bm: usize,
    pub cache: CacheMode,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            bm: 16,
            cache: CacheMode::Request,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n: usize,
    pub m: usize,
    pub bm_grid: Vec<usize>,
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 256,
            m: 32,
            bm_grid: vec![1, 4, 16, 32],
            reps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlReportConfig {
    pub alphas: Vec<f64>,
    pub max_lens: Vec<usize>,
}

impl Default for SlReportConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1.6, 1.7, 1.8, 1.9, 2.0],
            max_lens: vec![1024, 2048, 4096, 8192],
        }
    }
}

/// Everything a command reads. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Subcommand the config belongs to; checked when present.
    pub command: Option<String>,
    /// Overrides `synthetic.seed` and `train.seed` and seeds model init.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub data_format: DataFormat,
    pub synthetic: DPConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Stochastic Length policy for training; takes precedence over `train.sl`.
    pub sl: Option<SLPolicy>,
    pub eval: EvalConfig,
    pub infer: InferConfig,
    pub bench: BenchConfig,
    pub sl_report: SlReportConfig,
}

impl RunConfig {
    /// Reads a run config, or the config echoed inside a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let is_manifest = value.get("version").is_some() && value.get("config").is_some();
        let inner = if is_manifest { value["config"].clone() } else { value };
        serde_json::from_value(inner).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }

    pub fn resolved_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Checks every section a command relies on.
    pub fn validate(&self, command: &str) -> Result<()> {
        if let Some(c) = &self.command {
            if c != command {
                return Err(Error::config("command", format!("config is for `{c}`, not `{command}`")));
            }
        }
        match command {
            "generate" => self.synthetic.validate(),
            "train" => {
                self.model.validate()?;
                self.train.validate()
            }
            "eval" => validate_eval(&self.eval),
            "infer" => {
                if self.infer.bm == 0 {
                    return Err(Error::config("infer.bm", "must be at least 1"));
                }
                Ok(())
            }
            "bench" => {
                self.model.validate()?;
                if self.bench.m == 0 || self.bench.bm_grid.iter().any(|&b| b == 0) {
                    return Err(Error::config("bench.bm_grid", "candidate and microbatch counts must be positive"));
                }
                Ok(())
            }
            "sl-report" => {
                for &a in &self.sl_report.alphas {
                    for &n in &self.sl_report.max_lens {
                        SLPolicy::new(a, n, Selection::default())?;
                    }
                }
                Ok(())
            }
            _ => Err(Error::config("command", format!("unknown command `{command}`"))),
        }
    }
}

fn validate_eval(cfg: &EvalConfig) -> Result<()> {
    if cfg.ks.is_empty() || cfg.ks.contains(&0) {
        return Err(Error::config("eval.ks", "cut-offs must be positive"));
    }
    Ok(())
}

/// Written by every command; `--config <manifest>` repeats the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_seconds: f64,
    pub config: RunConfig,
    /// Output path to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

/// Worker thread cap from `HSTU_THREADS`, defaulting to the machine's parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var("HSTU_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::config("HSTU_THREADS", format!("expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn required(p: &Option<PathBuf>, field: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| Error::config(field, "path is required"))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: &Option<PathBuf>) {
    if v.is_some() {
        slot.clone_from(v);
    }
}

/// Merges file and flags into one config for `cmd`.
pub fn resolve(cmd: &Command) -> Result<RunConfig> {
    let common = match cmd {
        Command::Generate(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Infer(a) => &a.common,
        Command::Bench(a) => &a.common,
        Command::SlReport(a) => &a.common,
    };
    let mut rc = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = &rc.command {
        if c != cmd.name() {
            return Err(Error::config("command", format!("config is for `{c}`, not `{}`", cmd.name())));
        }
    }
    if let Some(s) = common.seed {
        rc.seed = Some(s);
    }
    match cmd {
        Command::Generate(a) => {
            match a.preset {
                Some(Preset::Desk) => rc.synthetic = DPConfig::desk(),
                Some(Preset::Full) => rc.synthetic = DPConfig::full(),
                None => {}
            }
            set_path(&mut rc.paths.data, &a.out);
            set(&mut rc.synthetic.num_items, a.num_items);
            set(&mut rc.synthetic.num_records, a.num_records);
            set(&mut rc.synthetic.train_fraction, a.train_fraction);
        }
        Command::Train(a) => {
            set_path(&mut rc.paths.data, &a.data.data);
            set(&mut rc.data_format, a.data.format);
            set_path(&mut rc.paths.checkpoint, &a.checkpoint);
            set_path(&mut rc.paths.timeline, &a.timeline);
            set(&mut rc.train.epochs, a.epochs);
            set(&mut rc.train.shuffle, a.shuffle);
            set(&mut rc.train.optimizer.lr, a.lr);
            set(&mut rc.train.batch_size, a.batch_size);
            set(&mut rc.train.num_negatives, a.num_negatives);
            match (a.sl_alpha, a.sl_max_len) {
                (Some(alpha), Some(max_len)) => rc.sl = Some(SLPolicy::new(alpha, max_len, Selection::default())?),
                (None, None) => {}
                _ => return Err(Error::config("sl_alpha", "--sl-alpha and --sl-max-len go together")),
            }
        }
        Command::Eval(a) => {
            set_path(&mut rc.paths.data, &a.data.data);
            set(&mut rc.data_format, a.data.format);
            set_path(&mut rc.paths.checkpoint, &a.checkpoint);
            set_path(&mut rc.paths.output, &a.out);
            match a.targets {
                Some(TargetsArg::Last) => rc.eval.targets = EvalTargets::Last,
                Some(TargetsArg::All) => rc.eval.targets = EvalTargets::All,
                None => {}
            }
        }
        Command::Infer(a) => {
            set_path(&mut rc.paths.checkpoint, &a.checkpoint);
            set_path(&mut rc.paths.events, &a.events);
            set_path(&mut rc.paths.candidates, &a.candidates);
            set_path(&mut rc.paths.output, &a.out);
            set(&mut rc.infer.bm, a.bm);
            match a.cache {
                Some(CacheArg::Off) => rc.infer.cache = CacheMode::Off,
                Some(CacheArg::Request) => rc.infer.cache = CacheMode::Request,
                Some(CacheArg::Session) => rc.infer.cache = CacheMode::Session,
                None => {}
            }
        }
        Command::Bench(a) => {
            set_path(&mut rc.paths.checkpoint, &a.checkpoint);
            set_path(&mut rc.paths.output, &a.out);
            set(&mut rc.bench.n, a.n);
            set(&mut rc.bench.m, a.m);
            set(&mut rc.bench.bm_grid, a.bm.clone());
            set(&mut rc.bench.reps, a.reps);
        }
        Command::SlReport(a) => {
            set_path(&mut rc.paths.histogram, &a.histogram);
            set_path(&mut rc.paths.output, &a.out);
            set(&mut rc.sl_report.alphas, a.alphas.clone());
            set(&mut rc.sl_report.max_lens, a.max_lens.clone());
        }
    }
    let seed = rc.resolved_seed();
    rc.seed = Some(seed);
    rc.synthetic.seed = seed;
    rc.train.seed = seed;
    if rc.sl.is_some() {
        rc.train.sl = rc.sl;
    }
    rc.command = Some(cmd.name().to_string());
    rc.validate(cmd.name())?;
    Ok(rc)
}

/// Parses, runs and writes the manifest.
pub fn run(cli: Cli) -> Result<Manifest> {
    let start = Instant::now();
    let threads = thread_count()?;
    let rc = resolve(&cli.command)?;
    let name = cli.command.name();
    let mut outputs: Vec<PathBuf> = Vec::new();
    let primary = match name {
        "generate" => cmd_generate(&rc, &mut outputs)?,
        "train" => cmd_train(&rc, &mut outputs)?,
        "eval" => cmd_eval(&rc, &mut outputs)?,
        "infer" => cmd_infer(&rc, threads, &mut outputs)?,
        "bench" => cmd_bench(&rc, &mut outputs)?,
        _ => cmd_sl_report(&rc, &mut outputs)?,
    };
    let mut hashes = BTreeMap::new();
    for p in &outputs {
        hashes.insert(p.display().to_string(), file_sha256(p)?);
    }
    let manifest = Manifest {
        command: name.to_string(),
        version: VERSION.to_string(),
        seed: rc.resolved_seed(),
        threads,
        wall_seconds: start.elapsed().as_secs_f64(),
        config: rc,
        outputs: hashes,
    };
    let common = match &cli.command {
        Command::Generate(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Infer(a) => &a.common,
        Command::Bench(a) => &a.common,
        Command::SlReport(a) => &a.common,
    };
    let mpath = common.manifest.clone().unwrap_or_else(|| {
        let mut s = primary.into_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    });
    write_json(&mpath, &manifest)?;
    Ok(manifest)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

fn cmd_generate(rc: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<PathBuf> {
    let out = required(&rc.paths.data, "paths.data")?;
    let digest = write_dp_dataset(&rc.synthetic, &out)?;
    println!("wrote {} records to {} (sha256 {digest})", rc.synthetic.num_records, out.display());
    outputs.push(out.clone());
    Ok(out)
}

/// Loaded training or evaluation input.
pub enum Loaded {
    Synthetic { cfg: DPConfig, records: Vec<Vec<u64>> },
    Events(Vec<Event>),
}

pub fn detect_format(path: &Path) -> Result<DataFormat> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        return Ok(if t.starts_with("# {") || t.starts_with("{\"items\"") {
            DataFormat::Dp
        } else if t.starts_with('{') || t.starts_with('#') {
            DataFormat::Events
        } else {
            DataFormat::Movielens
        });
    }
    Err(Error::Invalid(format!("{} holds no data", path.display())))
}

pub fn load_data(path: &Path, format: DataFormat, fallback: &DPConfig) -> Result<Loaded> {
    let format = match format {
        DataFormat::Auto => detect_format(path)?,
        f => f,
    };
    Ok(match format {
        DataFormat::Dp => {
            let (cfg, records) = read_dp_dataset(path)?;
            Loaded::Synthetic {
                cfg: cfg.unwrap_or_else(|| fallback.clone()),
                records,
            }
        }
        DataFormat::Movielens => Loaded::Events(read_movielens(path)?),
        _ => Loaded::Events(read_events_jsonl(path)?),
    })
}

/// Train and test streams: the split of synthetic records, or a
/// leave-last-out split of event histories.
pub fn split_data(data: &Loaded) -> Result<(Dataset, Dataset)> {
    match data {
        Loaded::Synthetic { cfg, records } => {
            let (train, test) = split_train_test(records.clone(), cfg.train_fraction)?;
            let k = train.len();
            Ok((Dataset::from_records(&train, cfg, 0), Dataset::from_records(&test, cfg, k)))
        }
        Loaded::Events(events) => Ok(Dataset::from_events(events).leave_one_out()),
    }
}

/// Smallest power of two covering every id, so the hashed table is collision-free.
pub fn covering_rows(max_id: u64) -> usize {
    (max_id as usize + 1).next_power_of_two()
}

fn cmd_train(rc: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<PathBuf> {
    let data_path = required(&rc.paths.data, "paths.data")?;
    let ckpt = required(&rc.paths.checkpoint, "paths.checkpoint")?;
    let data = load_data(&data_path, rc.data_format, &rc.synthetic)?;
    let (train_set, _) = split_data(&data)?;
    let mut mcfg = rc.model.clone();
    if let Some(&max_id) = train_set.corpus.last() {
        mcfg.item_rows = mcfg.item_rows.max(covering_rows(max_id));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rc.resolved_seed());
    let mut model: Model<f32> = Model::new(mcfg, &mut rng)?;
    let summary = train(&mut model, &train_set, &rc.train)?;
    model.save(&ckpt)?;
    outputs.push(ckpt.clone());
    if let Some(t) = &rc.paths.timeline {
        write_timeline_csv(t, &summary.timeline)?;
        outputs.push(t.clone());
    }
    println!(
        "trained on {} histories in {} steps; final loss {}",
        summary.examples_used,
        summary.steps,
        summary.final_loss.map_or("n/a".into(), |l| format!("{l:.5}"))
    );
    Ok(ckpt)
}

fn cmd_eval(rc: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<PathBuf> {
    let data_path = required(&rc.paths.data, "paths.data")?;
    let ckpt = required(&rc.paths.checkpoint, "paths.checkpoint")?;
    let out = required(&rc.paths.output, "paths.output")?;
    let model: Model<f32> = Model::load(&ckpt)?;
    let data = load_data(&data_path, rc.data_format, &rc.synthetic)?;
    let (_, test) = split_data(&data)?;
    let report = evaluate(&model, &test, &rc.eval)?;
    write_json(&out, &report)?;
    println!("{}", serde_json::to_string(&report)?);
    outputs.push(out.clone());
    Ok(out)
}

#[derive(Debug, Serialize)]
struct InferLine {
    user_id: u64,
    candidate: u64,
    probabilities: BTreeMap<String, f64>,
}

fn read_candidates(path: &Path) -> Result<Vec<u64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|e: std::num::ParseIntError| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One request per user: the user's most recent tokens, with candidates
/// stamped one second after the last event.
pub fn requests_from_events(model: &ModelConfig, events: &[Event], candidates: &[u64]) -> Vec<ScoreRequest> {
    sequentialize_users(events)
        .into_iter()
        .map(|(user, hist)| {
            let mut seq = build_sequence(&hist, model.task, model.positive_actions);
            crate::train::truncate(&mut seq, model.encoder.max_seq_len.saturating_sub(1).max(1));
            let last = hist.iter().map(|e| e.ts).max().unwrap_or(0);
            ScoreRequest {
                user_id: user,
                history: seq.tokens,
                candidates: candidates.to_vec(),
                request_ts: last + 1,
            }
        })
        .collect()
}

fn cmd_infer(rc: &RunConfig, threads: usize, outputs: &mut Vec<PathBuf>) -> Result<PathBuf> {
    let ckpt = required(&rc.paths.checkpoint, "paths.checkpoint")?;
    let events_path = required(&rc.paths.events, "paths.events")?;
    let cand_path = required(&rc.paths.candidates, "paths.candidates")?;
    let out = required(&rc.paths.output, "paths.output")?;
    let model: Model<f32> = Model::load(&ckpt)?;
    let events = read_events_jsonl(&events_path)?;
    let candidates = read_candidates(&cand_path)?;
    if candidates.is_empty() {
        return Err(Error::Invalid(format!("{} lists no candidates", cand_path.display())));
    }
    let reqs = requests_from_events(&model.cfg, &events, &candidates);
    let (bm, mode) = (rc.infer.bm, rc.infer.cache);
    let results = if mode == CacheMode::Session {
        // one session cache shared by all requests
        let mut scorer = Scorer::new(&model, bm, mode)?;
        reqs.iter().map(|r| scorer.score(r)).collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?;
        pool.install(|| {
            reqs.par_iter()
                .map(|r| Scorer::new(&model, bm, mode)?.score(r))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let io = |e| Error::io(&out, e);
    let mut w = BufWriter::new(File::create(&out).map_err(io)?);
    for (req, res) in reqs.iter().zip(&results) {
        for (i, &c) in req.candidates.iter().enumerate() {
            let probabilities = (0..model.cfg.num_actions)
                .map(|e| (format!("action_{e}"), res.probs.get(i, e) as f64))
                .collect();
            let line = InferLine {
                user_id: req.user_id,
                candidate: c,
                probabilities,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    println!("scored {} candidates for {} users", candidates.len(), reqs.len());
    outputs.push(out.clone());
    Ok(out)
}

fn cmd_bench(rc: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<PathBuf> {
    let out = required(&rc.paths.output, "paths.output")?;
    let model: Model<f32> = match &rc.paths.checkpoint {
        Some(p) => Model::load(p)?,
        None => Model::new(rc.model.clone(), &mut ChaCha8Rng::seed_from_u64(rc.resolved_seed()))?,
    };
    let b = &rc.bench;
    let rows = throughput_bench(&model, b.n, b.m, &b.bm_grid, b.reps, rc.resolved_seed())?;
    write_bench_csv(&out, &rows)?;
    for r in &rows {
        println!(
            "{:<8} bm={:<4} {:>12.1} candidates/s  {:>14} flops",
            r.method, r.bm, r.candidates_per_second, r.flops
        );
    }
    outputs.push(out.clone());
    Ok(out)
}

fn cmd_sl_report(rc: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<PathBuf> {
    let hist_path = required(&rc.paths.histogram, "paths.histogram")?;
    let out = required(&rc.paths.output, "paths.output")?;
    let hist = read_length_histogram(&hist_path)?;
    let cfg = &rc.sl_report;
    let cells = sparsity_table(&hist, &cfg.alphas, &cfg.max_lens)?;
    print!("{}", format_sparsity_table(&cells, &cfg.alphas, &cfg.max_lens));
    write_json(&out, &cells)?;
    outputs.push(out.clone());
    Ok(out)
}

//! Command-line front end.
//!
//! Every option can also be set in a TOML file passed with `--config`, using
//! the same names in snake_case. Command-line values win over the file,
//! which wins over built-in defaults.
//!
//! Exit codes: 0 success, 1 some units failed, 2 configuration or input error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::bbox::BBox;
use crate::dialogue::{ConversationSample, DialogueError, SampleBuilder, TaskKind, Window, CAPTION_WINDOW, TRACKING_WINDOW};
use crate::driver::{
    read_transcript, run_sequence, write_transcript, Backend, DriverConfig, HttpBackend, Lane, OracleBackend,
    PerturbationConfig, Query, ReplayBackend, RetryPolicy, RunStats, TranscriptEntry, API_KEY_ENV,
    DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::ingest::{load_mot_gt, write_report, write_report_csv, write_results, ClassFilter, DatasetLayout, IngestError};
use crate::metrics::{
    caption_scores, crmot_scores, evaluate_tracking, CaptionPair, CaptionScores, CrossViewIdMap, MetricReport,
    SequenceScores,
};
use crate::reward::{combined_reward, group_advantages, RewardConfig, Stage};
use crate::synth::{synth_dataset, SynthConfig};
use crate::track::{CaptionGroundTruth, Sequence, TrackSet};

#[derive(Debug, Parser)]
#[command(name = "vltrack", version, about = "Tracking with vision-language models: samples, inference, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write dialogue samples for one task as JSONL.
    BuildSamples,
    /// Run multi-round tracking and write MOTChallenge results.
    Track,
    /// Score predictions against the dataset.
    Evaluate,
    /// Score answers in a JSONL file of {response, gt_bbox} lines.
    Reward,
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub sequences: usize,
    #[arg(long, default_value_t = 64)]
    pub frames: u32,
    #[arg(long, default_value_t = 5)]
    pub max_objects: usize,
    /// Views per group; more than one writes views.json.
    #[arg(long, default_value_t = 1)]
    pub views: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    Mot,
    Rmot,
    Crmot,
    VideoCaption,
    InstanceCaption,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Mot => TaskKind::Mot,
            TaskArg::Rmot => TaskKind::Rmot,
            TaskArg::Crmot => TaskKind::Crmot,
            TaskArg::VideoCaption => TaskKind::VideoCaption,
            TaskArg::InstanceCaption => TaskKind::InstanceCaption,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackendArg {
    #[default]
    Oracle,
    Http,
    /// Answer from a recorded transcript (`--transcript`).
    Replay,
}

/// Options shared by all subcommands; unset values fall back to the config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// TOML file with default values for these options.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset root (MOTChallenge layout).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub task: Option<TaskArg>,
    /// Images per sample or per inference round. Defaults to 16 (32 for captions).
    #[arg(long, global = true)]
    pub window: Option<u32>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Oracle: box jitter standard deviation, in normalized units.
    #[arg(long, global = true)]
    pub jitter: Option<f64>,
    /// Oracle: probability of dropping a box.
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    /// Oracle: probability of swapping adjacent identities.
    #[arg(long, global = true)]
    pub swap: Option<f64>,
    /// Oracle: probability of writing a box in a malformed style.
    #[arg(long, global = true)]
    pub corrupt: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Output directory (a file for `reward`; stdout when unset).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Reward stage: 1 or 4.
    #[arg(long, global = true)]
    pub stage: Option<u8>,
    /// Consecutive reward lines forming one group for advantages.
    #[arg(long, global = true)]
    pub group_size: Option<usize>,
    /// Directory of predictions to evaluate.
    #[arg(long, global = true)]
    pub pred: Option<PathBuf>,
    /// Transcript JSONL for the replay backend.
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// Input JSONL for `reward`.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_output_tokens: Option<u32>,
    /// Retries per request after the first attempt.
    #[arg(long, global = true)]
    pub retries: Option<u32>,
    #[arg(long, global = true)]
    pub retry_delay_ms: Option<u64>,
    /// HTTP request timeout in seconds.
    #[arg(long, global = true)]
    pub timeout: Option<u64>,
    /// Annotation classes to load: `pedestrian` (default), `all`, or a comma list of class ids.
    #[arg(long, global = true)]
    pub classes: Option<String>,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident, $($f:ident),*) => {
        Options { config: $a.config, $($f: $a.$f.or($b.$f)),* }
    };
}

impl Options {
    /// Fills unset values from `file`.
    pub fn merge(self, file: Options) -> Options {
        let (a, b) = (self, file);
        merge_fields!(
            a, b, dataset, task, window, backend, jitter, dropout, swap, corrupt, seed, endpoint, model, out, jobs,
            stage, group_size, pred, transcript, input, max_output_tokens, retries, retry_delay_ms, timeout, classes
        )
    }

    /// Merges in the `--config` file, if any.
    pub fn with_config_file(self) -> Result<Options, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: Options =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(self.merge(file))
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Ingest(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub dataset: Option<PathBuf>,
    pub task: TaskKind,
    pub window: u32,
    pub backend: BackendArg,
    pub perturbation: PerturbationConfig,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub stage: Stage,
    pub group_size: Option<usize>,
    pub pred: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub max_output_tokens: u32,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub classes: ClassFilter,
}

fn parse_classes(text: &str) -> Result<ClassFilter, CliError> {
    match text.trim() {
        "pedestrian" => Ok(ClassFilter::Pedestrian),
        "all" => Ok(ClassFilter::All),
        list => list
            .split(',')
            .map(|c| c.trim().parse::<i64>())
            .collect::<Result<Vec<_>, _>>()
            .map(ClassFilter::Only)
            .map_err(|_| usage(format!("--classes must be pedestrian, all or a list of class ids, got '{text}'"))),
    }
}

impl Settings {
    pub fn resolve(o: Options) -> Result<Settings, CliError> {
        let task: TaskKind = o.task.unwrap_or(TaskArg::Mot).into();
        let cap = task.window_cap();
        let window = o.window.unwrap_or(if task.is_caption() { CAPTION_WINDOW } else { TRACKING_WINDOW });
        if window < 2 || window > cap {
            return Err(usage(format!("--window must be between 2 and {cap} for {task}, got {window}")));
        }
        let seed = o.seed.unwrap_or(0);
        let perturbation = PerturbationConfig {
            jitter_sigma: o.jitter.unwrap_or(0.0),
            dropout_prob: o.dropout.unwrap_or(0.0),
            swap_prob: o.swap.unwrap_or(0.0),
            format_corruption_prob: o.corrupt.unwrap_or(0.0),
            rng_seed: seed,
        };
        perturbation.validate().map_err(|e| usage(e.to_string()))?;
        let stage = match o.stage.unwrap_or(1) {
            1 => Stage::Stage1,
            4 => Stage::Stage4,
            s => return Err(usage(format!("--stage must be 1 or 4, got {s}"))),
        };
        let jobs = o.jobs.unwrap_or(4);
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        if o.group_size.is_some_and(|g| g < 2) {
            return Err(usage("--group-size must be at least 2"));
        }
        let defaults = RetryPolicy::default();
        Ok(Settings {
            dataset: o.dataset,
            task,
            window,
            backend: o.backend.unwrap_or_default(),
            perturbation,
            seed,
            endpoint: o.endpoint,
            model: o.model,
            out: o.out,
            jobs,
            stage,
            group_size: o.group_size,
            pred: o.pred,
            transcript: o.transcript,
            input: o.input,
            max_output_tokens: o.max_output_tokens.unwrap_or(DEFAULT_MAX_OUTPUT_TOKENS),
            retry: RetryPolicy {
                retries: o.retries.unwrap_or(defaults.retries),
                base_delay: o.retry_delay_ms.map_or(defaults.base_delay, Duration::from_millis),
            },
            timeout: Duration::from_secs(o.timeout.unwrap_or(120)),
            classes: o.classes.as_deref().map_or(Ok(ClassFilter::default()), parse_classes)?,
        })
    }

    fn dataset(&self) -> Result<DatasetLayout, CliError> {
        let root = self.dataset.as_ref().ok_or_else(|| usage("--dataset is required"))?;
        Ok(DatasetLayout::discover(root)?)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Runtime(e.into()))
    }
}

/// What a command did; units are sequences, expressions or view groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub units: usize,
    pub failures: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failures > 0)
    }
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = cli.options.with_config_file().and_then(Settings::resolve).and_then(|s| match &cli.command {
        Command::BuildSamples => cmd_build_samples(&s),
        Command::Track => cmd_track(&s),
        Command::Evaluate => cmd_evaluate(&s).map(|(_, o)| o),
        Command::Reward => cmd_reward(&s),
        Command::Synth(args) => cmd_synth(&s, args),
    });
    match result {
        Ok(o) => o.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
    }
    fs::write(path, contents).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()).into())
}

fn load_sequences(s: &Settings, layout: &DatasetLayout) -> Result<Vec<Sequence>, CliError> {
    Ok(layout.load_all(&s.classes)?)
}

/// View groups from `views.json`; without one every sequence is its own group.
fn view_groups<'a>(layout: &DatasetLayout, seqs: &'a [Sequence]) -> Vec<(String, Vec<&'a Sequence>)> {
    let find = |name: &str| seqs.iter().find(|s| s.id() == name).expect("layout checked names");
    if layout.view_groups.is_empty() {
        return seqs.iter().map(|s| (s.id().to_string(), vec![s])).collect();
    }
    layout.view_groups.iter().map(|(g, names)| (g.clone(), names.iter().map(|n| find(n)).collect())).collect()
}

fn restrict(seq: &Sequence, expression: &str) -> Sequence {
    let targets = &seq.meta.expression(expression).expect("expression exists").targets;
    Sequence { gt: seq.gt.filter_ids(targets), ..seq.clone() }
}

fn sample_seed(seed: u64, sequence: &str, start: u32) -> u64 {
    let h = sequence.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut z = seed ^ h ^ ((start as u64) << 32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Window start frames: back-to-back full windows, or one short window when
/// the sequence is shorter than `len`.
fn window_starts(frames: u32, len: u32) -> Vec<(u32, u32)> {
    if frames < len {
        return if frames == 0 { vec![] } else { vec![(0, frames)] };
    }
    (0..=frames - len).step_by(len as usize).map(|s| (s, len)).collect()
}

fn keep_sample(r: Result<ConversationSample, DialogueError>, out: &mut Vec<ConversationSample>) {
    match r {
        Ok(s) => out.push(s),
        Err(e) => log::debug!("sample skipped: {e}"),
    }
}

/// Samples for one task, in dataset order.
pub fn build_samples(s: &Settings, layout: &DatasetLayout, seqs: &[Sequence]) -> Result<Vec<ConversationSample>, CliError> {
    let builder = SampleBuilder { tracking_window: s.window.min(TRACKING_WINDOW), caption_window: s.window, ..Default::default() };
    let per_seq = |seq: &Sequence| -> Vec<ConversationSample> {
        let mut out = Vec::new();
        let frames = seq.gt.frame_count();
        match s.task {
            TaskKind::Mot => {
                for (start, len) in window_starts(frames, s.window) {
                    let seed = sample_seed(s.seed, seq.id(), start);
                    keep_sample(builder.build_mot_sample(seq, Window::new(start, len), seed), &mut out);
                }
            }
            TaskKind::Rmot => {
                for e in &seq.meta.expressions {
                    for (start, len) in window_starts(frames, s.window) {
                        keep_sample(builder.build_rmot_sample(seq, &e.id, Window::new(start, len)), &mut out);
                    }
                }
            }
            TaskKind::VideoCaption if seq.meta.captions.is_some() => {
                keep_sample(builder.build_caption_sample(seq, TaskKind::VideoCaption, None), &mut out);
            }
            TaskKind::InstanceCaption => {
                for id in seq.meta.captions.iter().flat_map(|c| c.instances.keys()) {
                    keep_sample(builder.build_caption_sample(seq, TaskKind::InstanceCaption, Some(*id)), &mut out);
                }
            }
            _ => {}
        }
        out
    };
    let pool = s.pool()?;
    if s.task != TaskKind::Crmot {
        return Ok(pool.install(|| seqs.par_iter().map(per_seq).collect::<Vec<_>>()).into_iter().flatten().collect());
    }
    let groups = view_groups(layout, seqs);
    let per_group = |(name, views): &(String, Vec<&Sequence>)| -> Vec<ConversationSample> {
        let mut out = Vec::new();
        if views.len() < 2 {
            log::warn!("view group {name} has a single view; no cross-view samples");
            return out;
        }
        let owned: Vec<Sequence> = views.iter().map(|v| (*v).clone()).collect();
        let step = SampleBuilder::split_views(s.window, views.len())[0].max(1);
        let frames = views.iter().map(|v| v.gt.frame_count()).min().unwrap_or(0);
        for e in &views[0].meta.expressions {
            let mut start = 0;
            while start + step <= frames {
                keep_sample(builder.build_crmot_sample(&owned, &e.id, start, s.window), &mut out);
                start += step;
            }
        }
        out
    };
    Ok(pool.install(|| groups.par_iter().map(per_group).collect::<Vec<_>>()).into_iter().flatten().collect())
}

pub fn cmd_build_samples(s: &Settings) -> Result<Outcome, CliError> {
    let layout = s.dataset()?;
    let seqs = load_sequences(s, &layout)?;
    let samples = build_samples(s, &layout, &seqs)?;
    let path = s.out_dir().join(format!("{}.jsonl", s.task));
    let body: String = samples.iter().map(|x| x.to_json_line() + "\n").collect();
    write_file(&path, &body)?;
    let mut per_sequence: BTreeMap<&str, usize> = BTreeMap::new();
    for x in &samples {
        *per_sequence.entry(x.sequence.as_str()).or_default() += 1;
    }
    let manifest = serde_json::json!({
        "task": s.task.name(),
        "file": path.file_name().and_then(|n| n.to_str()),
        "samples": samples.len(),
        "seed": s.seed,
        "window": s.window,
        "per_sequence": per_sequence,
    });
    let manifest_path = s.out_dir().join(format!("{}.manifest.json", s.task));
    write_file(&manifest_path, &format!("{:#}\n", manifest))?;
    println!("{} {} samples written to {}", samples.len(), s.task, path.display());
    Ok(Outcome { units: samples.len(), failures: 0 })
}

/// One driver run: a sequence, a sequence and expression, or a view group and expression.
struct TrackUnit {
    name: String,
    lanes: Vec<Sequence>,
    query: Query,
    /// Result file for each lane, relative to the output directory.
    outputs: Vec<PathBuf>,
}

fn track_units(task: TaskKind, layout: &DatasetLayout, seqs: &[Sequence]) -> Result<Vec<TrackUnit>, CliError> {
    let mut units = Vec::new();
    match task {
        TaskKind::Mot => {
            for seq in seqs {
                units.push(TrackUnit {
                    name: seq.id().to_string(),
                    lanes: vec![seq.clone()],
                    query: Query::Mot,
                    outputs: vec![PathBuf::from(format!("{}.txt", seq.id()))],
                });
            }
        }
        TaskKind::Rmot => {
            for seq in seqs {
                for e in &seq.meta.expressions {
                    units.push(TrackUnit {
                        name: format!("{}/{}", seq.id(), e.id),
                        lanes: vec![restrict(seq, &e.id)],
                        query: Query::Referring(e.text.clone()),
                        outputs: vec![Path::new(seq.id()).join(format!("{}.txt", e.id))],
                    });
                }
            }
        }
        TaskKind::Crmot => {
            for (group, views) in view_groups(layout, seqs) {
                for e in &views[0].meta.expressions {
                    if views.iter().any(|v| v.meta.expression(&e.id).is_none()) {
                        return Err(usage(format!("view group {group}: expression {} is missing in some views", e.id)));
                    }
                    units.push(TrackUnit {
                        name: format!("{group}/{}", e.id),
                        lanes: views.iter().map(|v| restrict(v, &e.id)).collect(),
                        query: Query::Referring(e.text.clone()),
                        outputs: views.iter().map(|v| Path::new(&group).join(&e.id).join(format!("{}.txt", v.id()))).collect(),
                    });
                }
            }
        }
        other => return Err(usage(format!("track supports mot, rmot and crmot, not {other}"))),
    }
    Ok(units)
}

/// Result of one tracking unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitReport {
    pub unit: String,
    #[serde(flatten)]
    pub stats: RunStats,
    /// Answers the oracle deliberately corrupted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupted_responses: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything `track` produced.
#[derive(Debug, Clone)]
pub struct TrackRun {
    pub units: Vec<UnitReport>,
    pub transcript: Vec<TranscriptEntry>,
    pub report: MetricReport,
}

fn shared_backend(s: &Settings) -> Result<Option<Box<dyn Backend>>, CliError> {
    Ok(match s.backend {
        BackendArg::Oracle => None,
        BackendArg::Http => {
            let key = std::env::var(API_KEY_ENV)
                .ok()
                .filter(|k| !k.trim().is_empty())
                .ok_or_else(|| usage(format!("the http backend needs an API key in ${API_KEY_ENV}")))?;
            let endpoint = s.endpoint.as_deref().ok_or_else(|| usage("--endpoint is required for the http backend"))?;
            let model = s.model.as_deref().ok_or_else(|| usage("--model is required for the http backend"))?;
            let mut b = HttpBackend::new(endpoint, key, model).with_timeout(s.timeout);
            if let Some(root) = &s.dataset {
                b = b.with_dataset_root(root);
            }
            Some(Box::new(b))
        }
        BackendArg::Replay => {
            let path = s.transcript.as_ref().ok_or_else(|| usage("--transcript is required for the replay backend"))?;
            if !path.is_file() {
                return Err(usage(format!("transcript {} not found", path.display())));
            }
            Some(Box::new(ReplayBackend::new(&read_transcript(path).map_err(|e| usage(format!("{e:#}")))?)))
        }
    })
}

/// Runs tracking over the dataset, writes results, transcript, stats and a
/// report into the output directory.
pub fn track_dataset(s: &Settings) -> Result<TrackRun, CliError> {
    let layout = s.dataset()?;
    let seqs = load_sequences(s, &layout)?;
    let units = track_units(s.task, &layout, &seqs)?;
    let shared = shared_backend(s)?;
    let cfg = DriverConfig { window_len: s.window, max_output_tokens: s.max_output_tokens, retry: s.retry };
    let run_unit = |u: &TrackUnit| {
        let lanes: Vec<Lane> = u.lanes.iter().map(Lane::from_sequence).collect();
        let (result, corrupted) = match &shared {
            Some(b) => (run_sequence(&lanes, &u.query, b.as_ref(), &cfg), None),
            None => {
                let oracle = OracleBackend::new(&u.lanes, s.perturbation).expect("validated perturbation settings");
                let r = run_sequence(&lanes, &u.query, &oracle, &cfg);
                (r, Some(oracle.corrupted_responses()))
            }
        };
        (result, corrupted)
    };
    let pool = s.pool()?;
    let results = pool.install(|| units.par_iter().map(run_unit).collect::<Vec<_>>());

    let out = s.out_dir();
    let mut reports = Vec::new();
    let mut transcript = Vec::new();
    for (u, (result, corrupted)) in units.iter().zip(results) {
        match result {
            Ok(run) => {
                for (ts, rel) in run.tracks.iter().zip(&u.outputs) {
                    write_results(ts, &out.join(rel)).map_err(|e| CliError::Runtime(e.into()))?;
                }
                transcript.extend(run.transcript);
                reports.push(UnitReport { unit: u.name.clone(), stats: run.stats, corrupted_responses: corrupted, error: None });
            }
            Err(e) => {
                log::error!("{}: {e}", u.name);
                reports.push(UnitReport {
                    unit: u.name.clone(),
                    stats: RunStats::default(),
                    corrupted_responses: corrupted,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    write_transcript(&out.join("transcript.jsonl"), &transcript)?;
    let stats = serde_json::to_string_pretty(&json!({ "units": reports })).expect("serializable") + "\n";
    write_file(&out.join("stats.json"), &stats)?;
    let report = evaluate_dir(s.task, &layout, &seqs, &out)?;
    write_report(&report, &out.join("report.json"))?;
    Ok(TrackRun { units: reports, transcript, report })
}

pub fn cmd_track(s: &Settings) -> Result<Outcome, CliError> {
    let run = track_dataset(s)?;
    let failures = run.units.iter().filter(|u| u.error.is_some()).count();
    let malformed: usize = run.units.iter().map(|u| u.stats.malformed_responses).sum();
    println!(
        "tracked {} unit(s), {failures} failed, {malformed} malformed answer(s); results in {}",
        run.units.len(),
        s.out_dir().display()
    );
    for line in run.report.summary_lines() {
        println!("{line}");
    }
    Ok(Outcome { units: run.units.len(), failures })
}

fn load_prediction(path: &Path, gt: &TrackSet, missing: &mut bool) -> Result<TrackSet, CliError> {
    if !path.is_file() {
        log::warn!("no prediction at {}; scoring as all misses", path.display());
        *missing = true;
        return Ok(gt.empty_like());
    }
    Ok(load_mot_gt(path, &gt.sequence_id, gt.image_size(), Some(gt.frame_count()), &ClassFilter::All)?)
}

fn tracking_entry(name: String, pred_path: &Path, gt: &TrackSet) -> Result<SequenceScores, CliError> {
    let mut missing = false;
    let pred = load_prediction(pred_path, gt, &mut missing)?;
    let scores = evaluate_tracking(&pred, gt).map_err(|e| usage(format!("{name}: {e}")))?;
    Ok(SequenceScores { sequence_id: name, tracking: Some(scores), missing_prediction: missing, ..Default::default() })
}

fn caption_entries(task: TaskKind, seqs: &[Sequence], pred: &Path) -> Result<Vec<SequenceScores>, CliError> {
    let mut pairs = Vec::new();
    let mut owners: Vec<(String, bool)> = Vec::new();
    let mut owner_of_pair = Vec::new();
    for seq in seqs {
        let Some(gt) = &seq.meta.captions else {
            log::warn!("{} has no caption ground truth; skipped", seq.id());
            continue;
        };
        let path = pred.join(format!("{}.captions.json", seq.id()));
        let predicted: Option<CaptionGroundTruth> = if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
            Some(serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?)
        } else {
            log::warn!("no prediction at {}; scoring empty captions", path.display());
            None
        };
        owners.push((seq.id().to_string(), predicted.is_none()));
        let mut push = |candidate: String, reference: &str| {
            pairs.push(CaptionPair { candidate, references: vec![reference.to_string()] });
            owner_of_pair.push(owners.len() - 1);
        };
        if task == TaskKind::VideoCaption {
            push(predicted.as_ref().map(|p| p.video_caption.clone()).unwrap_or_default(), &gt.video_caption);
        } else {
            for (id, reference) in &gt.instances {
                let cand = predicted.as_ref().and_then(|p| p.instances.get(id)).cloned().unwrap_or_default();
                push(cand, reference);
            }
        }
    }
    if pairs.is_empty() {
        return Err(usage("no caption ground truth in the dataset"));
    }
    let (per_pair, _) = caption_scores(&pairs).map_err(|e| usage(e.to_string()))?;
    let mut sums: Vec<(CaptionScores, usize)> =
        vec![(CaptionScores { bleu4: 0.0, rouge_l: 0.0, meteor: 0.0, cider_d: 0.0 }, 0); owners.len()];
    for (score, &o) in per_pair.iter().zip(&owner_of_pair) {
        let (acc, n) = &mut sums[o];
        acc.bleu4 += score.bleu4;
        acc.rouge_l += score.rouge_l;
        acc.meteor += score.meteor;
        acc.cider_d += score.cider_d;
        *n += 1;
    }
    Ok(owners
        .into_iter()
        .zip(sums)
        .filter(|(_, (_, n))| *n > 0)
        .map(|((name, missing), (acc, n))| {
            let k = n as f64;
            SequenceScores {
                sequence_id: name,
                caption: Some(CaptionScores {
                    bleu4: acc.bleu4 / k,
                    rouge_l: acc.rouge_l / k,
                    meteor: acc.meteor / k,
                    cider_d: acc.cider_d / k,
                }),
                missing_prediction: missing,
                ..Default::default()
            }
        })
        .collect())
}

/// Scores the predictions under `pred` for `task`.
pub fn evaluate_dir(task: TaskKind, layout: &DatasetLayout, seqs: &[Sequence], pred: &Path) -> Result<MetricReport, CliError> {
    let mut entries = Vec::new();
    match task {
        TaskKind::Mot => {
            for seq in seqs {
                entries.push(tracking_entry(seq.id().to_string(), &pred.join(format!("{}.txt", seq.id())), &seq.gt)?);
            }
        }
        TaskKind::Rmot => {
            for seq in seqs {
                for e in &seq.meta.expressions {
                    let gt = seq.gt.filter_ids(&e.targets);
                    let path = pred.join(seq.id()).join(format!("{}.txt", e.id));
                    let entry = tracking_entry(format!("{}/{}", seq.id(), e.id), &path, &gt)?;
                    if gt.is_empty() && entry.tracking.is_some_and(|t| t.fp == 0) {
                        log::info!("{}: no targets and no predictions; left out of the report", entry.sequence_id);
                        continue;
                    }
                    entries.push(entry);
                }
            }
        }
        TaskKind::Crmot => {
            for (group, views) in view_groups(layout, seqs) {
                for e in &views[0].meta.expressions {
                    let mut gts = Vec::new();
                    let mut preds = Vec::new();
                    let mut missing = false;
                    for v in &views {
                        let targets = &v.meta.expression(&e.id).ok_or_else(|| {
                            usage(format!("view group {group}: expression {} is missing in {}", e.id, v.id()))
                        })?;
                        let gt = v.gt.filter_ids(&targets.targets);
                        let path = pred.join(&group).join(&e.id).join(format!("{}.txt", v.id()));
                        preds.push(load_prediction(&path, &gt, &mut missing)?);
                        gts.push(gt);
                    }
                    if gts.iter().all(TrackSet::is_empty) && preds.iter().all(TrackSet::is_empty) {
                        log::info!("{group}/{}: no targets and no predictions; left out of the report", e.id);
                        continue;
                    }
                    let scores = crmot_scores(&preds, &gts, &CrossViewIdMap::identity(&gts))
                        .map_err(|err| usage(format!("{group}/{}: {err}", e.id)))?;
                    entries.push(SequenceScores {
                        sequence_id: format!("{group}/{}", e.id),
                        crossview: Some(scores),
                        missing_prediction: missing,
                        ..Default::default()
                    });
                }
            }
        }
        TaskKind::VideoCaption | TaskKind::InstanceCaption => entries = caption_entries(task, seqs, pred)?,
        other => return Err(usage(format!("cannot evaluate {other}"))),
    }
    Ok(MetricReport::new(task.name(), entries))
}

pub fn cmd_evaluate(s: &Settings) -> Result<(MetricReport, Outcome), CliError> {
    let layout = s.dataset()?;
    let pred = s.pred.as_ref().ok_or_else(|| usage("--pred is required"))?;
    if !pred.is_dir() {
        return Err(usage(format!("prediction directory {} not found", pred.display())));
    }
    let seqs = load_sequences(s, &layout)?;
    let report = evaluate_dir(s.task, &layout, &seqs, pred)?;
    let out = s.out.clone().unwrap_or_else(|| pred.clone());
    write_report(&report, &out.join("report.json")).map_err(|e| CliError::Runtime(e.into()))?;
    write_report_csv(&report, &out.join("report.csv")).map_err(|e| CliError::Runtime(e.into()))?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    let units = report.sequences.len();
    Ok((report, Outcome { units, failures: 0 }))
}

fn parse_reward_line(line: &str, n: usize) -> Result<(Map<String, Value>, String, BBox), CliError> {
    let bad = |why: &str| usage(format!("line {n}: {why}"));
    let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(line) else {
        return Err(bad("not a JSON object"));
    };
    let response = obj.get("response").and_then(Value::as_str).ok_or_else(|| bad("missing string field 'response'"))?;
    let coords: Vec<f64> = obj
        .get("gt_bbox")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    let [x, y, w, h] = coords[..] else {
        return Err(bad("'gt_bbox' must be [x, y, w, h]"));
    };
    let gt = BBox::new(x, y, w, h).map_err(|e| bad(&format!("gt_bbox: {e}")))?;
    Ok((obj.clone(), response.to_string(), gt))
}

/// Scores `{response, gt_bbox}` JSONL lines; returns the output lines.
pub fn reward_lines(input: &str, stage: Stage, group_size: Option<usize>) -> Result<Vec<String>, CliError> {
    let cfg = RewardConfig::stage(stage);
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (mut obj, response, gt) = parse_reward_line(line, i + 1)?;
        let r = combined_reward(&response, &gt, &cfg);
        obj.insert("format_class".into(), serde_json::to_value(r.format_class).expect("serializable"));
        obj.insert("reward".into(), json!(r.total));
        rows.push((obj, r.total));
    }
    if let Some(g) = group_size {
        if rows.len() % g != 0 {
            return Err(usage(format!("{} lines do not split into groups of {g}", rows.len())));
        }
        for chunk in rows.chunks_mut(g) {
            let rewards: Vec<f64> = chunk.iter().map(|(_, r)| *r).collect();
            let adv = group_advantages(&rewards).map_err(|e| usage(e.to_string()))?;
            for ((obj, _), a) in chunk.iter_mut().zip(adv) {
                obj.insert("advantage".into(), json!(a));
            }
        }
    }
    Ok(rows.into_iter().map(|(o, _)| Value::Object(o).to_string()).collect())
}

pub fn cmd_reward(s: &Settings) -> Result<Outcome, CliError> {
    let input = s.input.as_ref().ok_or_else(|| usage("--input is required"))?;
    let text = fs::read_to_string(input).map_err(|e| usage(format!("cannot read {}: {e}", input.display())))?;
    let lines = reward_lines(&text, s.stage, s.group_size)?;
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    match &s.out {
        Some(path) => write_file(path, &body)?,
        None => print!("{body}"),
    }
    Ok(Outcome { units: lines.len(), failures: 0 })
}

pub fn cmd_synth(s: &Settings, args: &SynthArgs) -> Result<Outcome, CliError> {
    if args.frames == 0 || args.max_objects == 0 || args.views == 0 {
        return Err(usage("--frames, --max-objects and --views must be positive"));
    }
    let cfg = SynthConfig {
        sequences: args.sequences,
        frames: args.frames,
        max_objects: args.max_objects,
        views: args.views,
        seed: s.seed,
        ..Default::default()
    };
    let data = synth_dataset(&cfg);
    let root = s.out_dir();
    data.write(&root).map_err(|e| CliError::Runtime(e.into()))?;
    let groups: BTreeMap<_, _> = data.view_groups.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    println!("{} sequences ({} view groups) written to {}", data.sequences.len(), groups.len(), root.display());
    Ok(Outcome { units: data.sequences.len(), failures: 0 })
}

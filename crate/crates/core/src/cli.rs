//! Command-line front end. Every pipeline stage is a subcommand reading and
//! writing CSV files; `run` chains them for a whole experiment.
//!
//! Parameter precedence: built-in defaults, then a `--config` JSON file,
//! then individual flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::detectors::{
    detect_series, load_events_csv, write_events_csv, DetectorConfig, DetectorKind, EventKind,
};
use crate::distribution::{
    kl_profile, load_score_csv, score_series, write_kl_csv, write_score_csv, KlOrder,
    KlProfileParams, RidgePolicy,
};
use crate::error::{Error, Result};
use crate::eval::{match_detections, render_report, synth_signal, ReportRow, SynthSpec};
use crate::experiment::{
    grasp_stream, merge_streams, run_experiment, ExperimentConfig, ScoringConfig,
};
use crate::kpca::{kpca_fit_project, separability_score, write_projection_csv};
use crate::preprocess::{
    load_rms_csv, load_slope_csv, rms_extract, slope_features, write_rms_csv, write_slope_csv,
};
use crate::stream::{
    concat_domains, drop_zero_channels, load_ground_truth_csv, load_signal_csv, split_domains,
    write_ground_truth_csv, write_signal_csv, SignalStream, Timeline, TimelineParams,
};

#[derive(Debug, Parser)]
#[command(
    name = "myodrift",
    version,
    about = "Domain-shift detection for multi-channel EMG-like streams"
)]
struct Cli {
    /// Seed for synthetic inputs; overrides any seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Raw signal CSV to per-channel RMS frames.
    Rms(RmsArgs),
    /// RMS frames to per-window OLS slope vectors.
    Features(FeaturesArgs),
    /// Slope vectors to rolling-reference Mahalanobis scores.
    Score(ScoreArgs),
    /// Sliding-window KL divergence against an initial reference block.
    Kl(KlArgs),
    /// Cosine-kernel KPCA of two domains and their separability.
    Kpca(KpcaArgs),
    /// Run one drift detector over a score series.
    Detect(DetectArgs),
    /// Generate a synthetic raw signal with known change points.
    Synth(SynthArgs),
    /// Match drift events against ground truth and report F1 / ADD.
    Eval(EvalArgs),
    /// Run a whole experiment from a JSON config.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct TimelineFlags {
    /// JSON file with timeline keys (rms_window_ms, rms_stride_ms,
    /// slope_window_frames, slope_stride_frames).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rms_window_ms: Option<f64>,
    #[arg(long)]
    rms_stride_ms: Option<f64>,
    #[arg(long)]
    slope_window_frames: Option<usize>,
    #[arg(long)]
    slope_stride_frames: Option<usize>,
}

impl TimelineFlags {
    fn resolve(&self, fs: f64) -> Result<Timeline> {
        let mut p: TimelineParams = load_optional(self.config.as_deref())?;
        if let Some(v) = self.rms_window_ms {
            p.rms_window_ms = v;
        }
        if let Some(v) = self.rms_stride_ms {
            p.rms_stride_ms = v;
        }
        if let Some(v) = self.slope_window_frames {
            p.slope_window_frames = v;
        }
        if let Some(v) = self.slope_stride_frames {
            p.slope_stride_frames = v;
        }
        Timeline::new(fs, p)
    }
}

#[derive(Debug, Args)]
struct SignalInput {
    /// Raw signal CSV; repeat to merge several files.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Sampling frequency in Hz.
    #[arg(long)]
    fs: f64,
    /// Keep only this grasp before any windowing.
    #[arg(long)]
    grasp: Option<i32>,
}

impl SignalInput {
    /// Loads, drops all-zero channels and joins domains in (subject,
    /// period) order.
    fn assemble(&self) -> Result<(SignalStream, crate::stream::GroundTruth)> {
        let streams = self
            .input
            .iter()
            .map(|p| load_signal_csv(p, self.fs))
            .collect::<Result<Vec<_>>>()?;
        let (signal, dropped) = drop_zero_channels(&merge_streams(streams)?)?;
        if !dropped.is_empty() {
            log::warn!("dropped all-zero channels {dropped:?}");
        }
        match self.grasp {
            Some(g) => grasp_stream(&signal, g),
            None => concat_domains(&split_domains(&signal)),
        }
    }
}

#[derive(Debug, Args)]
struct RmsArgs {
    #[command(flatten)]
    signal: SignalInput,
    #[command(flatten)]
    timeline: TimelineFlags,
    #[arg(long)]
    out: PathBuf,
    /// Also write the domain-junction ground truth.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// RMS CSV from `rms`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    fs: f64,
    #[command(flatten)]
    timeline: TimelineFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Slope CSV from `features`.
    #[arg(long)]
    input: PathBuf,
    /// JSON file with scoring keys (reference_capacity, ridge).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reference_capacity: Option<usize>,
    /// `auto`, `disabled`, or a fixed epsilon.
    #[arg(long, value_parser = parse_ridge)]
    ridge: Option<RidgePolicy>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct KlArgs {
    #[command(flatten)]
    signal: SignalInput,
    #[arg(long, default_value_t = 1600)]
    ref_len: usize,
    #[arg(long, default_value_t = 1600)]
    window: usize,
    #[arg(long, default_value_t = 1600)]
    step: usize,
    /// Argument order: `reference-first` computes KL(reference || local).
    #[arg(long, value_parser = parse_order, default_value = "reference-first")]
    order: KlOrder,
    #[arg(long, value_parser = parse_ridge, default_value = "auto")]
    ridge: RidgePolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct KpcaArgs {
    /// Exactly two raw signal CSVs, one per domain; labelled 0 and 1.
    #[arg(long, required = true, num_args = 1)]
    input: Vec<PathBuf>,
    #[arg(long)]
    fs: f64,
    /// Grasp to analyse; defaults to the smallest non-rest grasp present in
    /// both inputs.
    #[arg(long)]
    grasp: Option<i32>,
    #[arg(long, default_value_t = 3)]
    components: usize,
    /// Cap on RMS frames taken from each input (evenly spaced).
    #[arg(long, default_value_t = 300)]
    max_points: usize,
    #[command(flatten)]
    timeline: TimelineFlags,
    /// Projection CSV `index,pc1..,label`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Score CSV from `score`.
    #[arg(long)]
    input: PathBuf,
    /// JSON detector config, e.g. {"kind": "PH", "lambda": 30}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Detector kind; overrides the config's kind.
    #[arg(long)]
    detector: Option<DetectorKind>,
    /// Parameter override `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON synthetic spec (segments, transition, seed, sample_rate_hz, grasps).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Drift-events CSV from `detect`; one report row per detector label.
    #[arg(long)]
    events: PathBuf,
    /// Ground-truth CSV (`t_seconds`).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    window_seconds: f64,
    /// Grasp label written to the report.
    #[arg(long, default_value_t = 0)]
    grasp: i32,
    /// Detector label that gets a row even without events; repeatable.
    /// Listed labels come first, in the given order.
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_ridge(s: &str) -> std::result::Result<RidgePolicy, String> {
    match s {
        "auto" => Ok(RidgePolicy::Auto),
        "disabled" | "none" => Ok(RidgePolicy::Disabled),
        v => v
            .parse::<f64>()
            .ok()
            .filter(|e| e.is_finite() && *e >= 0.0)
            .map(RidgePolicy::Fixed)
            .ok_or_else(|| format!("expected auto, disabled or a non-negative number, got `{v}`")),
    }
}

fn parse_order(s: &str) -> std::result::Result<KlOrder, String> {
    match s {
        "reference-first" => Ok(KlOrder::ReferenceFirst),
        "local-first" => Ok(KlOrder::LocalFirst),
        _ => Err(format!(
            "expected reference-first or local-first, got `{s}`"
        )),
    }
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_optional<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_json)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 ok, 1 data or validation error, 2 usage
/// error.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rms(a) => rms(a),
        Command::Features(a) => features(a),
        Command::Score(a) => score(a),
        Command::Kl(a) => kl(a),
        Command::Kpca(a) => kpca(a),
        Command::Detect(a) => detect(a),
        Command::Synth(a) => synth(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a, cli.seed),
    }
}

fn rms(a: RmsArgs) -> Result<()> {
    let (stream, truth) = a.signal.assemble()?;
    let timeline = a.timeline.resolve(a.signal.fs)?;
    let frames = rms_extract(&stream, &timeline);
    if frames.is_empty() {
        log::warn!("stream shorter than one RMS window; no frames written");
    }
    write_rms_csv(&frames, stream.n_channels(), &a.out)?;
    if let Some(p) = &a.truth_out {
        write_ground_truth_csv(&truth, p)?;
    }
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let timeline = a.timeline.resolve(a.fs)?;
    let frames = load_rms_csv(&a.input)?;
    let k = frames.first().map_or(0, |f| f.values.len());
    let slopes = slope_features(&frames, &timeline);
    write_slope_csv(&slopes, k, &a.out)
}

fn score(a: ScoreArgs) -> Result<()> {
    let mut cfg: ScoringConfig = load_optional(a.config.as_deref())?;
    if let Some(c) = a.reference_capacity {
        cfg.reference_capacity = c;
    }
    if let Some(r) = a.ridge {
        cfg.ridge = r;
    }
    let slopes = load_slope_csv(&a.input)?;
    let scores = score_series(&slopes, cfg.reference_capacity, cfg.ridge)?;
    write_score_csv(&scores, &a.out)
}

fn kl(a: KlArgs) -> Result<()> {
    let (stream, _) = a.signal.assemble()?;
    let rows: Vec<&[f64]> = stream.rows().collect();
    let params = KlProfileParams {
        ref_len: a.ref_len,
        window: a.window,
        step: a.step,
        order: a.order,
        ridge: a.ridge,
    };
    let points = kl_profile(&rows, &params)?;
    let fs = stream.sample_rate_hz();
    let with_t: Vec<_> = points
        .into_iter()
        .map(|p| (p, p.start_index as f64 / fs))
        .collect();
    write_kl_csv(&with_t, &a.out)
}

fn kpca(a: KpcaArgs) -> Result<()> {
    if a.input.len() != 2 {
        return Err(Error::Config(format!(
            "kpca needs exactly two --input files, got {}",
            a.input.len()
        )));
    }
    if a.max_points == 0 {
        return Err(Error::param("max_points", "must be positive"));
    }
    let streams = a
        .input
        .iter()
        .map(|p| load_signal_csv(p, a.fs))
        .collect::<Result<Vec<_>>>()?;
    let grasp = match a.grasp {
        Some(g) => g,
        None => {
            let g0 = streams[0].grasps();
            streams[1]
                .grasps()
                .into_iter()
                .filter(|g| *g != 0 && g0.contains(g))
                .min()
                .ok_or_else(|| Error::Schema("the two inputs share no non-rest grasp".into()))?
        }
    };
    log::info!("kpca on grasp {grasp}");
    // drop channels that are zero in the union so both sides keep the same columns
    let merged = merge_streams(streams.clone())?;
    let (_, dropped) = drop_zero_channels(&merged)?;
    let timeline = a.timeline.resolve(a.fs)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (label, s) in streams.iter().enumerate() {
        let (g, _) = grasp_stream(s, grasp)?;
        let frames = rms_extract(&g, &timeline);
        let n = frames.len();
        let take = n.min(a.max_points);
        for i in 0..take {
            let f = &frames[i * n / take];
            let v: Vec<f64> = f
                .values
                .iter()
                .enumerate()
                .filter(|(c, _)| !dropped.contains(&(c + 1)))
                .map(|(_, v)| *v)
                .collect();
            rows.push(v);
            labels.push(label == 1);
        }
    }
    let (_, y) = kpca_fit_project(&rows, a.components)?;
    write_projection_csv(&y, &labels, &a.out)?;
    let sep = separability_score(&y, &labels)?;
    write_output(None, &format!("accuracy={:.6}\n", sep.accuracy))
}

fn detect(a: DetectArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_json::<DetectorConfig>(p)?,
        None => DetectorConfig::new(a.detector.ok_or_else(|| {
            Error::Config("detect needs --detector or a --config naming the kind".into())
        })?),
    };
    if let Some(k) = a.detector {
        cfg.kind = k;
    }
    cfg.params.extend(a.params.iter().cloned());
    let scores = load_score_csv(&a.input)?;
    let events = detect_series(&cfg, &scores)?;
    write_events_csv(&events, &a.out)
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = load_json(&a.config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (signal, truth) = synth_signal(&spec)?;
    write_signal_csv(&signal, &a.out)?;
    if let Some(p) = &a.truth_out {
        write_ground_truth_csv(&truth, p)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(a.window_seconds.is_finite() && a.window_seconds >= 0.0) {
        return Err(Error::param(
            "window_seconds",
            "must be finite and non-negative",
        ));
    }
    let truth = load_ground_truth_csv(&a.truth)?;
    let events = load_events_csv(&a.events)?;
    let mut order: Vec<String> = Vec::new();
    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for l in &a.labels {
        if !times.contains_key(l) {
            order.push(l.clone());
            times.insert(l.clone(), Vec::new());
        }
    }
    for e in &events {
        if !times.contains_key(&e.detector) {
            order.push(e.detector.clone());
            times.insert(e.detector.clone(), Vec::new());
        }
        if e.kind == EventKind::Drift {
            times
                .get_mut(&e.detector)
                .expect("inserted above")
                .push(e.t_seconds);
        }
    }
    let rows: Vec<ReportRow> = order
        .iter()
        .map(|d| {
            ReportRow::from_match(
                d.clone(),
                a.grasp,
                &match_detections(truth.boundaries(), &times[d], a.window_seconds),
            )
        })
        .collect();
    write_output(a.out.as_deref(), &render_report(&rows))
}

fn run(a: RunArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let outcome = run_experiment(&cfg)?;
    write_output(a.out.as_deref(), &render_report(&outcome.rows))?;
    if let Some(first) = outcome.failures.first() {
        for f in &outcome.failures {
            eprintln!("failed: {f}");
        }
        return Err(Error::Stage(format!(
            "{} job(s) failed, first: {first}",
            outcome.failures.len()
        )));
    }
    Ok(())
}

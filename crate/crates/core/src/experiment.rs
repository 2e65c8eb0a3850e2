//! End-to-end runner: raw signal (or synthetic input) to a per-(grasp,
//! detector) report. Labels only decide how the stream is assembled and
//! scored against ground truth; detectors see nothing but scores.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{detect_series, DetectorConfig, DetectorKind, EventKind};
use crate::distribution::{score_series, RidgePolicy, ScorePoint, DEFAULT_REFERENCE_CAPACITY};
use crate::error::{Error, Result};
use crate::eval::{
    match_detections, synth_generate, synth_signal, ReportRow, SynthSpec,
    DEFAULT_MATCH_WINDOW_SECONDS,
};
use crate::preprocess::{rms_extract, slope_features};
use crate::stream::{
    concat_domains, drop_zero_channels, filter_grasp, load_signal_csv, split_domains, GroundTruth,
    Sample, SignalStream, Timeline, TimelineParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inputs {
    /// Raw signal CSVs, merged before processing.
    Csv {
        paths: Vec<PathBuf>,
        sample_rate_hz: f64,
        /// Grasps to evaluate; defaults to every non-rest grasp present.
        #[serde(default)]
        grasps: Option<Vec<i32>>,
    },
    /// A synthetic raw signal, one domain per segment.
    Synth { spec: SynthSpec },
    /// A synthetic one-dimensional score stream fed straight to the
    /// detectors, one score per sample.
    Scores { spec: SynthSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub reference_capacity: usize,
    pub ridge: RidgePolicy,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            reference_capacity: DEFAULT_REFERENCE_CAPACITY,
            ridge: RidgePolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    pub window_seconds: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            window_seconds: DEFAULT_MATCH_WINDOW_SECONDS,
        }
    }
}

/// A detector entry: fixed parameters plus an optional grid whose
/// Cartesian product expands into one configuration per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grid: BTreeMap<String, Vec<f64>>,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl DetectorSpec {
    pub fn expand(&self) -> Result<Vec<DetectorConfig>> {
        let mut cells = vec![self.params.clone()];
        for (name, values) in &self.grid {
            if values.is_empty() {
                return Err(Error::Config(format!("grid for `{name}` is empty")));
            }
            if self.params.contains_key(name) {
                return Err(Error::Config(format!("`{name}` is both fixed and gridded")));
            }
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |&v| {
                        let mut c = cell.clone();
                        c.insert(name.clone(), v);
                        c
                    })
                })
                .collect();
        }
        Ok(cells
            .into_iter()
            .map(|params| DetectorConfig {
                kind: self.kind,
                params,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub inputs: Inputs,
    #[serde(default)]
    pub timeline: TimelineParams,
    #[serde(default)]
    pub scoring: ScoringConfig,
    /// Empty means every detector kind at its defaults.
    #[serde(default)]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub matching: MatchingConfig,
    /// Overrides the seed of synthetic inputs.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config; relative CSV paths resolve against the config's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Inputs::Csv { paths, .. } = &mut cfg.inputs {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn detector_configs(&self) -> Result<Vec<DetectorConfig>> {
        if self.detectors.is_empty() {
            return Ok(DetectorKind::ALL
                .iter()
                .map(|&k| DetectorConfig::new(k))
                .collect());
        }
        let mut out = Vec::new();
        for d in &self.detectors {
            out.extend(d.expand()?);
        }
        // construct once up front so bad parameters fail before any work
        for c in &out {
            crate::detectors::create_detector(c)?;
        }
        Ok(out)
    }
}

/// Restricts a stream to one grasp and joins its domains in ascending
/// (subject, period) order. Junctions become the ground truth.
pub fn grasp_stream(stream: &SignalStream, grasp: i32) -> Result<(SignalStream, GroundTruth)> {
    let filtered = filter_grasp(stream, grasp);
    if filtered.is_empty() {
        return Err(Error::InsufficientData {
            what: "grasp samples",
            needed: 1,
            got: 0,
        });
    }
    concat_domains(&split_domains(&filtered))
}

/// Merges several raw streams into one. Channel names must agree.
pub fn merge_streams(streams: Vec<SignalStream>) -> Result<SignalStream> {
    let first = streams.first().ok_or(Error::InsufficientData {
        what: "input streams",
        needed: 1,
        got: 0,
    })?;
    let fs = first.sample_rate_hz();
    let names = first.channel_names().to_vec();
    let mut samples: Vec<Sample> = Vec::new();
    for s in &streams {
        if s.channel_names() != names.as_slice() {
            return Err(Error::Schema(
                "input files disagree on channel columns".into(),
            ));
        }
        samples.extend(s.samples().iter().cloned());
    }
    SignalStream::new(samples, fs, names)
}

/// A failed stage of one job.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFailure {
    pub grasp: i32,
    pub detector: Option<String>,
    pub stage: &'static str,
    pub message: String,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "grasp {}", self.grasp)?;
        if let Some(d) = &self.detector {
            write!(f, ", detector {d}")?;
        }
        write!(f, ", stage {}: {}", self.stage, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutcome {
    /// Sorted by grasp, then detector config order.
    pub rows: Vec<ReportRow>,
    pub failures: Vec<StageFailure>,
}

struct GraspScores {
    grasp: i32,
    scores: Vec<ScorePoint>,
    truth: GroundTruth,
}

/// Scores of one grasp stream: RMS, slopes, rolling Mahalanobis.
pub fn score_stream(
    stream: &SignalStream,
    timeline: &Timeline,
    scoring: &ScoringConfig,
) -> Result<Vec<ScorePoint>> {
    let frames = rms_extract(stream, timeline);
    let slopes = slope_features(&frames, timeline);
    score_series(&slopes, scoring.reference_capacity, scoring.ridge)
}

fn stage<T>(grasp: i32, stage: &'static str, r: Result<T>) -> std::result::Result<T, StageFailure> {
    r.map_err(|e| StageFailure {
        grasp,
        detector: None,
        stage,
        message: e.to_string(),
    })
}

type Prepared = std::result::Result<GraspScores, StageFailure>;

fn prepare(config: &ExperimentConfig) -> Result<Vec<Prepared>> {
    let seed_override = |spec: &SynthSpec| {
        let mut s = spec.clone();
        if let Some(seed) = config.seed {
            s.seed = seed;
        }
        s
    };
    let signal = match &config.inputs {
        Inputs::Scores { spec } => {
            let spec = seed_override(spec);
            let jobs = spec
                .grasps
                .iter()
                .enumerate()
                .map(|(gi, &grasp)| {
                    let mut s = spec.clone();
                    s.seed = spec.seed.wrapping_add(gi as u64);
                    let (rows, truth) = stage(grasp, "synth", synth_generate(&s))?;
                    let scores = rows
                        .iter()
                        .enumerate()
                        .map(|(i, r)| ScorePoint {
                            score: r[0],
                            window_index: i,
                            t_seconds: i as f64 / s.sample_rate_hz,
                            degenerate: false,
                        })
                        .collect();
                    Ok(GraspScores {
                        grasp,
                        scores,
                        truth,
                    })
                })
                .collect();
            return Ok(jobs);
        }
        Inputs::Synth { spec } => synth_signal(&seed_override(spec))?.0,
        Inputs::Csv {
            paths,
            sample_rate_hz,
            ..
        } => {
            let streams = paths
                .iter()
                .map(|p| load_signal_csv(p, *sample_rate_hz))
                .collect::<Result<Vec<_>>>()?;
            merge_streams(streams)?
        }
    };
    let (signal, dropped) = drop_zero_channels(&signal)?;
    if !dropped.is_empty() {
        log::info!("dropped all-zero channels {dropped:?}");
    }
    let grasps = match &config.inputs {
        Inputs::Csv {
            grasps: Some(g), ..
        } => g.clone(),
        _ => signal.grasps().into_iter().filter(|&g| g != 0).collect(),
    };
    if grasps.is_empty() {
        return Err(Error::Schema(
            "no non-rest grasp labels in the input".into(),
        ));
    }
    let timeline = Timeline::new(signal.sample_rate_hz(), config.timeline)?;
    let jobs = grasps
        .par_iter()
        .map(|&grasp| {
            let (stream, truth) = stage(grasp, "assemble", grasp_stream(&signal, grasp))?;
            let scores = stage(
                grasp,
                "score",
                score_stream(&stream, &timeline, &config.scoring),
            )?;
            Ok(GraspScores {
                grasp,
                scores,
                truth,
            })
        })
        .collect();
    Ok(jobs)
}

/// Runs the whole pipeline. Config-level problems are errors; failures of
/// individual (grasp, detector) jobs are collected and the rest continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if !(config.matching.window_seconds.is_finite() && config.matching.window_seconds >= 0.0) {
        return Err(Error::param(
            "window_seconds",
            "must be finite and non-negative",
        ));
    }
    let detectors = config.detector_configs()?;
    let prepared = prepare(config)?;
    let mut outcome = ExperimentOutcome::default();
    let mut ready = Vec::new();
    for p in prepared {
        match p {
            Ok(g) => ready.push(g),
            Err(f) => outcome.failures.push(f),
        }
    }
    let jobs: Vec<(usize, usize)> = (0..ready.len())
        .flat_map(|g| (0..detectors.len()).map(move |d| (g, d)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(g, d)| {
            let gs = &ready[g];
            let cfg = &detectors[d];
            let label = cfg.label();
            let events = detect_series(cfg, &gs.scores).map_err(|e| StageFailure {
                grasp: gs.grasp,
                detector: Some(label.clone()),
                stage: "detect",
                message: e.to_string(),
            })?;
            let times: Vec<f64> = events
                .iter()
                .filter(|e| e.kind == EventKind::Drift)
                .map(|e| e.t_seconds)
                .collect();
            let m = match_detections(
                gs.truth.boundaries(),
                &times,
                config.matching.window_seconds,
            );
            Ok(((gs.grasp, d), ReportRow::from_match(label, gs.grasp, &m)))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => outcome.failures.push(f),
        }
    }
    rows.sort_by_key(|(key, _)| *key);
    outcome.rows = rows.into_iter().map(|(_, r)| r).collect();
    outcome
        .failures
        .sort_by(|a, b| (a.grasp, &a.detector).cmp(&(b.grasp, &b.detector)));
    Ok(outcome)
}

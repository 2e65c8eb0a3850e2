//! Ground-truth matching, F1 and average detection delay, and synthetic
//! drift streams with known change points.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detectors::csv_field;
use crate::error::{Error, Result};
use crate::stream::{GroundTruth, Sample, SignalStream};

pub const DEFAULT_MATCH_WINDOW_SECONDS: f64 = 10.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// One delay per true positive, in truth order.
    pub delays_seconds: Vec<f64>,
}

/// Greedy earliest-first matching: each truth `t` takes the earliest
/// unmatched detection in `[t, t + window]`. Inputs are sorted first, so
/// their order does not matter.
pub fn match_detections(truths: &[f64], detections: &[f64], window_seconds: f64) -> MatchResult {
    let mut truths = truths.to_vec();
    truths.sort_by(f64::total_cmp);
    let mut dets = detections.to_vec();
    dets.sort_by(f64::total_cmp);
    let mut used = vec![false; dets.len()];
    let mut out = MatchResult::default();
    for &t in &truths {
        let hit = dets
            .iter()
            .enumerate()
            .find(|&(i, &d)| !used[i] && d >= t && d <= t + window_seconds);
        match hit {
            Some((i, &d)) => {
                used[i] = true;
                out.tp += 1;
                out.delays_seconds.push(d - t);
            }
            None => out.fn_ += 1,
        }
    }
    out.fp = used.iter().filter(|&&u| !u).count();
    out
}

/// `2tp / (2tp + fp + fn)`, or 0 with nothing to score.
pub fn f1(m: &MatchResult) -> f64 {
    let denom = 2 * m.tp + m.fp + m.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * m.tp) as f64 / denom as f64
    }
}

/// Mean delay over true positives; `None` without any.
pub fn add_seconds(m: &MatchResult) -> Option<f64> {
    if m.delays_seconds.is_empty() {
        None
    } else {
        Some(m.delays_seconds.iter().sum::<f64>() / m.delays_seconds.len() as f64)
    }
}

/// Renders an optional delay the way the report does.
pub fn format_add(add: Option<f64>) -> String {
    match add {
        Some(v) => format!("{v:.6}"),
        None => "--".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub detector: String,
    pub grasp: i32,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub f1: f64,
    pub add_seconds: Option<f64>,
}

impl ReportRow {
    pub fn from_match(detector: impl Into<String>, grasp: i32, m: &MatchResult) -> Self {
        Self {
            detector: detector.into(),
            grasp,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            f1: f1(m),
            add_seconds: add_seconds(m),
        }
    }
}

pub const REPORT_HEADER: &str = "detector,grasp,tp,fp,fn,f1,add_seconds";

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    s.push_str(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{}",
            csv_field(&r.detector),
            r.grasp,
            r.tp,
            r.fp,
            r.fn_,
            r.f1,
            format_add(r.add_seconds)
        );
    }
    s
}

pub fn write_report_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariance {
    Full(Vec<Vec<f64>>),
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
}

impl Covariance {
    fn matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Full(rows) => {
                let d = rows.len();
                DMatrix::from_fn(d, d, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
            }
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub mean: Vec<f64>,
    pub cov: Covariance,
    /// Length in samples.
    pub duration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Transition {
    #[default]
    Abrupt,
    /// The mean moves linearly from one segment to the next over the first
    /// `width` samples of the new segment.
    Gradual { width: usize },
}

fn default_rate() -> f64 {
    1.0
}

fn default_grasps() -> Vec<i32> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub transition: Transition,
    #[serde(default)]
    pub seed: u64,
    /// Converts sample positions to seconds for the ground truth.
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    /// Grasp labels used when the spec is rendered as a raw signal.
    #[serde(default = "default_grasps")]
    pub grasps: Vec<i32>,
}

impl SynthSpec {
    pub fn dim(&self) -> usize {
        self.segments.first().map_or(0, |s| s.mean.len())
    }

    fn validate(&self) -> Result<Vec<DMatrix<f64>>> {
        if self.segments.is_empty() {
            return Err(Error::Config(
                "synthetic spec needs at least one segment".into(),
            ));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::param(
                "sample_rate_hz",
                "must be positive and finite",
            ));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("segment means must be non-empty".into()));
        }
        let min_duration = self.segments.iter().map(|s| s.duration).min().unwrap_or(0);
        if min_duration == 0 {
            return Err(Error::param(
                "duration",
                "every segment needs at least one sample",
            ));
        }
        if let Transition::Gradual { width } = self.transition {
            if width >= min_duration {
                return Err(Error::param(
                    "width",
                    "must be below the shortest segment duration",
                ));
            }
        }
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.mean.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: s.mean.len(),
                    });
                }
                let cov = s.cov.matrix();
                if cov.nrows() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: cov.nrows(),
                    });
                }
                let sym = (&cov - cov.transpose()).amax();
                if !cov.iter().all(|v| v.is_finite()) || sym > 1e-12 {
                    return Err(Error::Config(format!(
                        "segment {i}: covariance must be finite and symmetric"
                    )));
                }
                cov.cholesky().map(|c| c.l()).ok_or_else(|| {
                    Error::Config(format!("segment {i}: covariance is not positive definite"))
                })
            })
            .collect()
    }
}

/// Draws the segments in order. Each sample is `mean + L z` with `L` the
/// Cholesky factor of the segment covariance and `z` standard normal, so the
/// random draws do not depend on the transition style.
pub fn synth_generate(spec: &SynthSpec) -> Result<(Vec<Vec<f64>>, GroundTruth)> {
    let factors = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim();
    let total: usize = spec.segments.iter().map(|s| s.duration).sum();
    let mut rows = Vec::with_capacity(total);
    let mut boundaries = Vec::with_capacity(spec.segments.len() - 1);
    let width = match spec.transition {
        Transition::Abrupt => 0,
        Transition::Gradual { width } => width,
    };
    for (k, seg) in spec.segments.iter().enumerate() {
        if k > 0 {
            boundaries.push(rows.len() as f64 / spec.sample_rate_hz);
        }
        let l = &factors[k];
        for i in 0..seg.duration {
            let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let noise = l * z;
            let mean: Vec<f64> = if k > 0 && i < width {
                let prev = &spec.segments[k - 1].mean;
                let f = (i + 1) as f64 / (width + 1) as f64;
                prev.iter()
                    .zip(&seg.mean)
                    .map(|(a, b)| a + f * (b - a))
                    .collect()
            } else {
                seg.mean.clone()
            };
            rows.push(mean.iter().zip(noise.iter()).map(|(m, e)| m + e).collect());
        }
    }
    Ok((rows, GroundTruth::new(boundaries)?))
}

/// Renders a spec as a raw signal: segment `k` becomes domain
/// (subject 1, period k + 1), holding one block per grasp in `spec.grasps`
/// order. Each grasp gets its own draws (seed offset by its position), so
/// filtering to one grasp yields a stream whose junctions match the spec's
/// ground truth.
pub fn synth_signal(spec: &SynthSpec) -> Result<(SignalStream, GroundTruth)> {
    if spec.grasps.is_empty() {
        return Err(Error::Config(
            "synthetic spec needs at least one grasp".into(),
        ));
    }
    let mut per_grasp = Vec::with_capacity(spec.grasps.len());
    let mut truth = GroundTruth::default();
    for (gi, _) in spec.grasps.iter().enumerate() {
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(gi as u64);
        let (rows, gt) = synth_generate(&s)?;
        per_grasp.push(rows);
        truth = gt;
    }
    let mut samples = Vec::with_capacity(per_grasp.iter().map(Vec::len).sum());
    let mut offset = 0;
    for (k, seg) in spec.segments.iter().enumerate() {
        for (gi, &grasp) in spec.grasps.iter().enumerate() {
            for row in &per_grasp[gi][offset..offset + seg.duration] {
                samples.push(Sample {
                    channels: row.clone(),
                    subject: 1,
                    period: k as u32 + 1,
                    grasp,
                    index: 0,
                });
            }
        }
        offset += seg.duration;
    }
    let names = (1..=spec.dim()).map(|c| format!("emg_{c}")).collect();
    Ok((
        SignalStream::new(samples, spec.sample_rate_hz, names)?,
        truth,
    ))
}

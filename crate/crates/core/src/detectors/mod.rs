//! Incremental change detectors behind one contract.
//!
//! Every detector consumes a univariate stream and reports `InControl`,
//! `Warning`, or `Drift`. After a `Drift`, the detector forgets its
//! pre-drift statistics before handling the next value.

mod abcd;
mod adwin;
mod cusum;
mod ddm;
mod gma;
mod hddm;
mod page_hinkley;
mod seed;
mod window;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distribution::ScorePoint;
use crate::error::{Error, Result};

pub use abcd::Abcd;
pub use adwin::Adwin;
pub use cusum::Cusum;
pub use ddm::{Binarizer, Ddm};
pub use gma::Gma;
pub use hddm::{HddmA, HddmW};
pub use page_hinkley::PageHinkley;
pub use seed::Seed;
pub use window::{MinMaxRescaler, RunningStats, SlidingMinMax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "CUSUM")]
    Cusum,
    #[serde(rename = "GMA")]
    Gma,
    #[serde(rename = "PH")]
    PageHinkley,
    #[serde(rename = "DDM")]
    Ddm,
    #[serde(rename = "ADWIN")]
    Adwin,
    #[serde(rename = "HDDM_A")]
    HddmA,
    #[serde(rename = "HDDM_W")]
    HddmW,
    #[serde(rename = "SEED")]
    Seed,
    #[serde(rename = "ABCD")]
    Abcd,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 9] = [
        DetectorKind::Cusum,
        DetectorKind::Gma,
        DetectorKind::PageHinkley,
        DetectorKind::Ddm,
        DetectorKind::Adwin,
        DetectorKind::HddmA,
        DetectorKind::HddmW,
        DetectorKind::Seed,
        DetectorKind::Abcd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Cusum => "CUSUM",
            DetectorKind::Gma => "GMA",
            DetectorKind::PageHinkley => "PH",
            DetectorKind::Ddm => "DDM",
            DetectorKind::Adwin => "ADWIN",
            DetectorKind::HddmA => "HDDM_A",
            DetectorKind::HddmW => "HDDM_W",
            DetectorKind::Seed => "SEED",
            DetectorKind::Abcd => "ABCD",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let kind = match norm.as_str() {
            "CUSUM" => DetectorKind::Cusum,
            "GMA" => DetectorKind::Gma,
            "PH" | "PAGE_HINKLEY" | "PAGEHINKLEY" => DetectorKind::PageHinkley,
            "DDM" => DetectorKind::Ddm,
            "ADWIN" => DetectorKind::Adwin,
            "HDDM_A" | "HDDMA" => DetectorKind::HddmA,
            "HDDM_W" | "HDDMW" => DetectorKind::HddmW,
            "SEED" => DetectorKind::Seed,
            "ABCD" => DetectorKind::Abcd,
            _ => return Err(Error::UnknownDetector(s.to_string())),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Status {
    #[default]
    InControl,
    Warning,
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectorState {
    pub status: Status,
    /// Values consumed since construction or the last reset.
    pub n_seen: u64,
}

pub trait Detector: Send + fmt::Debug {
    fn kind(&self) -> DetectorKind;

    fn update(&mut self, value: f64) -> Result<DetectorState>;

    fn state(&self) -> DetectorState;

    /// Discards all statistics, as after a drift.
    fn reset(&mut self);
}

/// Per-kind state machine wrapped by [`Monitored`].
pub(crate) trait Core: Send + fmt::Debug {
    const KIND: DetectorKind;

    fn step(&mut self, value: f64) -> Result<Status>;

    fn clear(&mut self);
}

/// Shared bookkeeping: finite-input checks, `n_seen`, and reset after drift.
#[derive(Debug, Clone)]
pub struct Monitored<C> {
    core: C,
    state: DetectorState,
}

impl<C> Monitored<C> {
    pub(crate) fn new(core: C) -> Self {
        Self {
            core,
            state: DetectorState::default(),
        }
    }

    pub fn inner(&self) -> &C {
        &self.core
    }
}

impl<C: Core> Detector for Monitored<C> {
    fn kind(&self) -> DetectorKind {
        C::KIND
    }

    fn update(&mut self, value: f64) -> Result<DetectorState> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} input", C::KIND)));
        }
        if self.state.status == Status::Drift {
            self.reset();
        }
        let status = self.core.step(value)?;
        self.state.n_seen += 1;
        self.state.status = status;
        Ok(self.state)
    }

    fn state(&self) -> DetectorState {
        self.state
    }

    fn reset(&mut self) {
        self.core.clear();
        self.state = DetectorState::default();
    }
}

/// A detector kind with named numeric parameters. Missing parameters take
/// their defaults; unknown names are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// `KIND` or `KIND[a=1,b=2]` when parameters are overridden.
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return self.kind.name().to_string();
        }
        let inner: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{}[{}]", self.kind, inner.join(","))
    }
}

/// Reads named parameters out of a config map, tracking which were used.
pub(crate) struct Params<'a> {
    map: &'a BTreeMap<String, f64>,
    known: Vec<&'static str>,
}

impl<'a> Params<'a> {
    fn new(map: &'a BTreeMap<String, f64>) -> Self {
        Self {
            map,
            known: Vec::new(),
        }
    }

    fn raw(&mut self, name: &'static str, default: f64) -> Result<f64> {
        self.known.push(name);
        let v = self.map.get(name).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::param(name, "must be finite"));
        }
        Ok(v)
    }

    pub(crate) fn positive(&mut self, name: &'static str, default: f64) -> Result<f64> {
        let v = self.raw(name, default)?;
        if v <= 0.0 {
            return Err(Error::param(name, format!("must be > 0, got {v}")));
        }
        Ok(v)
    }

    pub(crate) fn non_negative(&mut self, name: &'static str, default: f64) -> Result<f64> {
        let v = self.raw(name, default)?;
        if v < 0.0 {
            return Err(Error::param(name, format!("must be >= 0, got {v}")));
        }
        Ok(v)
    }

    pub(crate) fn unit_open(&mut self, name: &'static str, default: f64) -> Result<f64> {
        let v = self.raw(name, default)?;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::param(name, format!("must lie in (0, 1), got {v}")));
        }
        Ok(v)
    }

    pub(crate) fn count(
        &mut self,
        name: &'static str,
        default: usize,
        min: usize,
    ) -> Result<usize> {
        let v = self.raw(name, default as f64)?;
        if v.fract() != 0.0 || v < min as f64 {
            return Err(Error::param(
                name,
                format!("must be an integer >= {min}, got {v}"),
            ));
        }
        Ok(v as usize)
    }

    pub(crate) fn flag(&mut self, name: &'static str, default: bool) -> Result<bool> {
        let v = self.raw(name, if default { 1.0 } else { 0.0 })?;
        if v == 0.0 {
            Ok(false)
        } else if v == 1.0 {
            Ok(true)
        } else {
            Err(Error::param(name, format!("must be 0 or 1, got {v}")))
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.known.contains(&key.as_str()) {
                return Err(Error::param(
                    key.clone(),
                    "unknown parameter for this detector",
                ));
            }
        }
        Ok(())
    }
}

/// Builds a fresh detector from its config.
pub fn create_detector(config: &DetectorConfig) -> Result<Box<dyn Detector>> {
    let mut p = Params::new(&config.params);
    let det: Box<dyn Detector> = match config.kind {
        DetectorKind::Cusum => Box::new(Monitored::new(Cusum::from_params(&mut p)?)),
        DetectorKind::Gma => Box::new(Monitored::new(Gma::from_params(&mut p)?)),
        DetectorKind::PageHinkley => Box::new(Monitored::new(PageHinkley::from_params(&mut p)?)),
        DetectorKind::Ddm => {
            let ddm = Ddm::from_params(&mut p)?;
            // binarization keys belong to the score adapter
            Binarizer::from_params(&mut p)?;
            Box::new(Monitored::new(ddm))
        }
        DetectorKind::Adwin => Box::new(Monitored::new(Adwin::from_params(&mut p)?)),
        DetectorKind::HddmA => Box::new(Monitored::new(HddmA::from_params(&mut p)?)),
        DetectorKind::HddmW => Box::new(Monitored::new(HddmW::from_params(&mut p)?)),
        DetectorKind::Seed => Box::new(Monitored::new(Seed::from_params(&mut p)?)),
        DetectorKind::Abcd => Box::new(Monitored::new(Abcd::from_params(&mut p)?)),
    };
    p.finish()?;
    Ok(det)
}

/// Feeds real-valued scores to a detector. DDM receives scores binarized
/// against a percentile of its first calibration scores; every other kind
/// sees the raw values.
#[derive(Debug)]
pub struct ScoreMonitor {
    detector: Box<dyn Detector>,
    binarizer: Option<Binarizer>,
}

impl ScoreMonitor {
    pub fn new(config: &DetectorConfig) -> Result<Self> {
        let detector = create_detector(config)?;
        let binarizer = if config.kind == DetectorKind::Ddm {
            let mut p = Params::new(&config.params);
            Ddm::from_params(&mut p)?;
            Some(Binarizer::from_params(&mut p)?)
        } else {
            None
        };
        Ok(Self {
            detector,
            binarizer,
        })
    }

    pub fn kind(&self) -> DetectorKind {
        self.detector.kind()
    }

    /// Returns the most severe status reached while handling `value`.
    pub fn update(&mut self, value: f64) -> Result<DetectorState> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} input", self.kind())));
        }
        let Some(bin) = self.binarizer.as_mut() else {
            return self.detector.update(value);
        };
        let mut worst = self.detector.state();
        let mut first = true;
        for b in bin.push(value) {
            let st = self.detector.update(b)?;
            if first || st.status > worst.status {
                worst = st;
                first = false;
            }
        }
        if first {
            // still calibrating
            return Ok(DetectorState {
                status: Status::InControl,
                n_seen: 0,
            });
        }
        Ok(DetectorState {
            status: worst.status,
            n_seen: self.detector.state().n_seen,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Warning,
    Drift,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Warning => "warning",
            EventKind::Drift => "drift",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftEvent {
    pub detector: String,
    pub kind: EventKind,
    pub t_seconds: f64,
    /// Position of the triggering point in the score series.
    pub score_index: usize,
}

/// Runs one detector over a score series, emitting an event for each
/// transition into `Warning` or `Drift`.
pub fn detect_series(config: &DetectorConfig, scores: &[ScorePoint]) -> Result<Vec<DriftEvent>> {
    let mut monitor = ScoreMonitor::new(config)?;
    let label = config.label();
    let mut events = Vec::new();
    let mut prev = Status::InControl;
    for (i, p) in scores.iter().enumerate() {
        let status = monitor.update(p.score)?.status;
        let kind = match status {
            Status::Drift => Some(EventKind::Drift),
            Status::Warning if prev != Status::Warning => Some(EventKind::Warning),
            _ => None,
        };
        if let Some(kind) = kind {
            events.push(DriftEvent {
                detector: label.clone(),
                kind,
                t_seconds: p.t_seconds,
                score_index: i,
            });
        }
        prev = status;
    }
    Ok(events)
}

/// Index positions where a monitor reports drift on a raw value stream.
pub fn drift_indices(config: &DetectorConfig, values: &[f64]) -> Result<Vec<usize>> {
    let mut monitor = ScoreMonitor::new(config)?;
    let mut out = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if monitor.update(v)?.status == Status::Drift {
            out.push(i);
        }
    }
    Ok(out)
}

pub fn write_events_csv(events: &[DriftEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        writeln!(out, "detector,kind,t_seconds,score_index")?;
        for e in events {
            writeln!(
                out,
                "{},{},{:.6},{}",
                csv_field(&e.detector),
                e.kind,
                e.t_seconds,
                e.score_index
            )?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn load_events_csv(path: impl AsRef<Path>) -> Result<Vec<DriftEvent>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(f);
    let headers = rdr.headers()?.clone();
    let pos = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.into(),
            })
    };
    let (dc, kc, tc, ic) = (
        pos("detector")?,
        pos("kind")?,
        pos("t_seconds")?,
        pos("score_index")?,
    );
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |c: usize| Error::Parse {
            row: r + 1,
            column: headers[c].into(),
            value: rec.get(c).unwrap_or("").into(),
        };
        let kind = match rec.get(kc).unwrap_or("") {
            "warning" => EventKind::Warning,
            "drift" => EventKind::Drift,
            _ => return Err(bad(kc)),
        };
        out.push(DriftEvent {
            detector: rec.get(dc).unwrap_or("").to_string(),
            kind,
            t_seconds: rec.get(tc).unwrap_or("").parse().map_err(|_| bad(tc))?,
            score_index: rec.get(ic).unwrap_or("").parse().map_err(|_| bad(ic))?,
        });
    }
    Ok(out)
}

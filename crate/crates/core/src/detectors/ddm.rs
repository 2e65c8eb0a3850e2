use super::{Core, DetectorKind, Params, Status};
use crate::error::{Error, Result};

/// Drift Detection Method over a binary error stream.
///
/// Tracks the error rate `p` and its standard deviation `s`, remembers the
/// point where `p + s` was smallest, and signals warning/drift when
/// `p + s` rises `warning_level` / `drift_level` minimum-deviations above it.
/// The minimum is only recorded once at least one error has been seen, so
/// an error-free prefix cannot pin it at zero.
#[derive(Debug, Clone)]
pub struct Ddm {
    min_n: usize,
    warning_level: f64,
    drift_level: f64,
    n: u64,
    errors: u64,
    p_min: f64,
    s_min: f64,
}

impl Ddm {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let min_n = p.count("min_n", 30, 1)?;
        let warning_level = p.positive("warning_level", 2.0)?;
        let drift_level = p.positive("drift_level", 3.0)?;
        if drift_level < warning_level {
            return Err(Error::param("drift_level", "must be >= warning_level"));
        }
        Ok(Self::new(min_n, warning_level, drift_level))
    }

    pub fn new(min_n: usize, warning_level: f64, drift_level: f64) -> Self {
        Self {
            min_n,
            warning_level,
            drift_level,
            n: 0,
            errors: 0,
            p_min: f64::INFINITY,
            s_min: f64::INFINITY,
        }
    }

    pub fn error_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.errors as f64 / self.n as f64
        }
    }
}

impl Core for Ddm {
    const KIND: DetectorKind = DetectorKind::Ddm;

    fn step(&mut self, x: f64) -> Result<Status> {
        let err = if x == 1.0 {
            true
        } else if x == 0.0 {
            false
        } else {
            return Err(Error::NonBinary {
                detector: "DDM",
                value: x,
            });
        };
        self.n += 1;
        self.errors += u64::from(err);
        if self.n < self.min_n as u64 || self.errors == 0 {
            return Ok(Status::InControl);
        }
        let p = self.error_rate();
        let s = (p * (1.0 - p) / self.n as f64).sqrt();
        if p + s < self.p_min + self.s_min {
            self.p_min = p;
            self.s_min = s;
        }
        let level = p + s;
        Ok(
            if level >= self.p_min + self.drift_level * self.s_min && self.s_min > 0.0 {
                Status::Drift
            } else if level >= self.p_min + self.warning_level * self.s_min && self.s_min > 0.0 {
                Status::Warning
            } else {
                Status::InControl
            },
        )
    }

    fn clear(&mut self) {
        *self = Self::new(self.min_n, self.warning_level, self.drift_level);
    }
}

/// Turns real-valued scores into 0/1 "errors": the threshold is the
/// `quantile`-th percentile of the first `calibration_n` scores, and a score
/// strictly above it maps to 1. Calibration scores are replayed once the
/// threshold is known.
#[derive(Debug, Clone)]
pub struct Binarizer {
    quantile: f64,
    calibration_n: usize,
    pending: Vec<f64>,
    threshold: Option<f64>,
}

impl Binarizer {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let quantile = p.positive("quantile", 95.0)?;
        if quantile > 100.0 {
            return Err(Error::param("quantile", "must be <= 100"));
        }
        Ok(Self::new(quantile, p.count("calibration_n", 50, 1)?))
    }

    pub fn new(quantile: f64, calibration_n: usize) -> Self {
        Self {
            quantile,
            calibration_n,
            pending: Vec::with_capacity(calibration_n),
            threshold: None,
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// Returns the binary values ready to be fed downstream.
    pub fn push(&mut self, x: f64) -> Vec<f64> {
        if let Some(t) = self.threshold {
            return vec![f64::from(u8::from(x > t))];
        }
        self.pending.push(x);
        if self.pending.len() < self.calibration_n {
            return Vec::new();
        }
        let t = percentile(&self.pending, self.quantile);
        self.threshold = Some(t);
        std::mem::take(&mut self.pending)
            .into_iter()
            .map(|v| f64::from(u8::from(v > t)))
            .collect()
    }
}

/// Linear-interpolation percentile, `q` in [0, 100].
pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

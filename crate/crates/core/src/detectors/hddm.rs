//! Hoeffding-bound drift detectors. Both expect inputs in [0, 1]; raw values
//! pass through a sliding min-max rescaler first. The rescaler is input
//! conditioning, so it survives drift resets.

use super::window::MinMaxRescaler;
use super::{Core, DetectorKind, Params, Status};
use crate::error::{Error, Result};

fn confidences(p: &mut Params<'_>) -> Result<(f64, f64)> {
    let drift = p.unit_open("drift_confidence", 0.001)?;
    let warning = p.unit_open("warning_confidence", 0.005)?;
    if warning < drift {
        return Err(Error::param(
            "warning_confidence",
            "must be >= drift_confidence",
        ));
    }
    Ok((drift, warning))
}

/// Running sum over a prefix of the stream.
#[derive(Debug, Clone, Copy, Default)]
struct Prefix {
    n: u64,
    sum: f64,
}

impl Prefix {
    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// HDDM with the A-test: compares the mean since reset against the mean up
/// to a cut point chosen where the Hoeffding-adjusted mean was most extreme.
#[derive(Debug, Clone)]
pub struct HddmA {
    drift_confidence: f64,
    warning_confidence: f64,
    two_sided: bool,
    rescaler: MinMaxRescaler,
    rescale_window: usize,
    total: Prefix,
    cut_low: Option<Prefix>,
    cut_high: Option<Prefix>,
}

impl HddmA {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let (drift, warning) = confidences(p)?;
        let two_sided = p.flag("two_sided", false)?;
        let window = p.count("rescale_window", 200, 2)?;
        Ok(Self::new(drift, warning, two_sided, window))
    }

    pub fn new(
        drift_confidence: f64,
        warning_confidence: f64,
        two_sided: bool,
        rescale_window: usize,
    ) -> Self {
        Self {
            drift_confidence,
            warning_confidence,
            two_sided,
            rescaler: MinMaxRescaler::new(rescale_window, rescale_window),
            rescale_window,
            total: Prefix::default(),
            cut_low: None,
            cut_high: None,
        }
    }

    fn eps(&self, n: u64) -> f64 {
        ((1.0 / self.drift_confidence).ln() / (2.0 * n as f64)).sqrt()
    }

    /// Hoeffding test that the mean moved from `cut` to the overall mean by
    /// more than chance allows at `confidence`. `sign` +1 tests an increase.
    fn shifted(&self, cut: Option<Prefix>, confidence: f64, sign: f64) -> bool {
        let Some(cut) = cut else { return false };
        let n = self.total.n;
        if n <= cut.n {
            return false;
        }
        let m = (n - cut.n) as f64 / (cut.n as f64 * n as f64);
        let eps = (m / 2.0 * (1.0 / confidence).ln()).sqrt();
        sign * (self.total.mean() - cut.mean()) >= eps
    }

    fn test(&self, confidence: f64) -> bool {
        self.shifted(self.cut_low, confidence, 1.0)
            || (self.two_sided && self.shifted(self.cut_high, confidence, -1.0))
    }
}

impl Core for HddmA {
    const KIND: DetectorKind = DetectorKind::HddmA;

    fn step(&mut self, raw: f64) -> Result<Status> {
        let x = self.rescaler.rescale(raw);
        self.total.n += 1;
        self.total.sum += x;
        let here = self.total.mean() + self.eps(self.total.n);
        if self
            .cut_low
            .is_none_or(|c| here <= c.mean() + self.eps(c.n))
        {
            self.cut_low = Some(self.total);
        }
        let here = self.total.mean() - self.eps(self.total.n);
        if self
            .cut_high
            .is_none_or(|c| here >= c.mean() - self.eps(c.n))
        {
            self.cut_high = Some(self.total);
        }
        Ok(if self.test(self.drift_confidence) {
            Status::Drift
        } else if self.test(self.warning_confidence) {
            Status::Warning
        } else {
            Status::InControl
        })
    }

    fn clear(&mut self) {
        let rescaler = self.rescaler.clone();
        *self = Self::new(
            self.drift_confidence,
            self.warning_confidence,
            self.two_sided,
            self.rescale_window,
        );
        self.rescaler = rescaler;
    }
}

/// Exponentially weighted mean together with the sum of squared weights,
/// which drives McDiarmid's bound.
#[derive(Debug, Clone, Copy, Default)]
struct Ewma {
    value: Option<f64>,
    weight_sq: f64,
}

impl Ewma {
    fn push(&mut self, x: f64, lambda: f64) {
        match self.value {
            None => {
                self.value = Some(x);
                self.weight_sq = 1.0;
            }
            Some(v) => {
                let keep = 1.0 - lambda;
                self.value = Some(lambda * x + keep * v);
                self.weight_sq = lambda * lambda + keep * keep * self.weight_sq;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Side {
    /// EWMA snapshot at the cut point.
    before: Ewma,
    /// EWMA of values after the cut point.
    after: Ewma,
    cut_bound: f64,
}

impl Default for Side {
    fn default() -> Self {
        Self {
            before: Ewma::default(),
            after: Ewma::default(),
            cut_bound: f64::INFINITY,
        }
    }
}

/// HDDM with the W-test: like the A-test but on exponentially weighted
/// means, so recent values dominate.
#[derive(Debug, Clone)]
pub struct HddmW {
    drift_confidence: f64,
    warning_confidence: f64,
    lambda: f64,
    two_sided: bool,
    rescaler: MinMaxRescaler,
    rescale_window: usize,
    total: Ewma,
    up: Side,
    down: Side,
}

impl HddmW {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let (drift, warning) = confidences(p)?;
        let lambda = p.unit_open("lambda", 0.05)?;
        let two_sided = p.flag("two_sided", false)?;
        let window = p.count("rescale_window", 200, 2)?;
        Ok(Self::new(drift, warning, lambda, two_sided, window))
    }

    pub fn new(
        drift_confidence: f64,
        warning_confidence: f64,
        lambda: f64,
        two_sided: bool,
        rescale_window: usize,
    ) -> Self {
        Self {
            drift_confidence,
            warning_confidence,
            lambda,
            two_sided,
            rescaler: MinMaxRescaler::new(rescale_window, rescale_window),
            rescale_window,
            total: Ewma::default(),
            up: Side::default(),
            down: Side::default(),
        }
    }

    fn bound(weight_sq: f64, confidence: f64) -> f64 {
        (weight_sq * (1.0 / confidence).ln() / 2.0).sqrt()
    }

    fn update_side(side: &mut Side, total: Ewma, x: f64, lambda: f64, bound: f64, sign: f64) {
        let t = total.value.expect("total updated first");
        let better = match side.before.value {
            None => true,
            Some(b) => sign * t + bound < sign * b + side.cut_bound,
        };
        if better {
            side.cut_bound = bound;
            side.before = total;
            side.after = Ewma::default();
        } else {
            side.after.push(x, lambda);
        }
    }

    fn shifted(side: &Side, confidence: f64, sign: f64) -> bool {
        let (Some(b), Some(a)) = (side.before.value, side.after.value) else {
            return false;
        };
        let eps = Self::bound(side.before.weight_sq + side.after.weight_sq, confidence);
        sign * (a - b) > eps
    }

    fn test(&self, confidence: f64) -> bool {
        Self::shifted(&self.up, confidence, 1.0)
            || (self.two_sided && Self::shifted(&self.down, confidence, -1.0))
    }
}

impl Core for HddmW {
    const KIND: DetectorKind = DetectorKind::HddmW;

    fn step(&mut self, raw: f64) -> Result<Status> {
        let x = self.rescaler.rescale(raw);
        self.total.push(x, self.lambda);
        let bound = Self::bound(self.total.weight_sq, self.drift_confidence);
        Self::update_side(&mut self.up, self.total, x, self.lambda, bound, 1.0);
        Self::update_side(&mut self.down, self.total, x, self.lambda, bound, -1.0);
        Ok(if self.test(self.drift_confidence) {
            Status::Drift
        } else if self.test(self.warning_confidence) {
            Status::Warning
        } else {
            Status::InControl
        })
    }

    fn clear(&mut self) {
        let rescaler = self.rescaler.clone();
        *self = Self::new(
            self.drift_confidence,
            self.warning_confidence,
            self.lambda,
            self.two_sided,
            self.rescale_window,
        );
        self.rescaler = rescaler;
    }
}

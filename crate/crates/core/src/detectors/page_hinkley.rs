use super::{Core, DetectorKind, Params, Status};
use crate::error::Result;

/// Two-sided Page-Hinkley test.
///
/// Tracks the cumulative sum of standardized deviations from a running mean
/// and its historical minimum; the gap between the two is the test
/// statistic. The decreasing side mirrors the increasing one. `alpha` fades
/// the running mean and variance: once `n > 1 / (1 - alpha)` new values get
/// weight `1 - alpha` instead of `1 / n`.
#[derive(Debug, Clone)]
pub struct PageHinkley {
    min_n: usize,
    delta: f64,
    lambda: f64,
    alpha: f64,
    n: u64,
    mean: f64,
    var: f64,
    sum_up: f64,
    min_up: f64,
    sum_down: f64,
    min_down: f64,
}

impl PageHinkley {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let min_n = p.count("min_n", 30, 2)?;
        let delta = p.non_negative("delta", 0.25)?;
        let lambda = p.positive("lambda", 50.0)?;
        let alpha = p.positive("alpha", 0.9999)?;
        if alpha > 1.0 {
            return Err(crate::error::Error::param("alpha", "must be <= 1"));
        }
        Ok(Self::new(min_n, delta, lambda, alpha))
    }

    pub fn new(min_n: usize, delta: f64, lambda: f64, alpha: f64) -> Self {
        Self {
            min_n,
            delta,
            lambda,
            alpha,
            n: 0,
            mean: 0.0,
            var: 0.0,
            sum_up: 0.0,
            min_up: 0.0,
            sum_down: 0.0,
            min_down: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        self.n += 1;
        let w = (1.0 / self.n as f64).max(1.0 - self.alpha);
        let d = x - self.mean;
        self.mean += w * d;
        // exponentially weighted variance; reduces to the biased sample
        // variance while w = 1/n
        self.var = (1.0 - w) * (self.var + w * d * d);
    }

    fn standardize(&self, x: f64) -> f64 {
        let dev = x - self.mean;
        let sd = self.var.sqrt();
        if sd > 0.0 {
            dev / sd
        } else if dev == 0.0 {
            0.0
        } else {
            dev.signum() * f64::INFINITY
        }
    }

    pub fn statistic(&self) -> f64 {
        (self.sum_up - self.min_up).max(self.sum_down - self.min_down)
    }
}

impl Core for PageHinkley {
    const KIND: DetectorKind = DetectorKind::PageHinkley;

    fn step(&mut self, x: f64) -> Result<Status> {
        let mut status = Status::InControl;
        if self.n >= self.min_n as u64 {
            let z = self.standardize(x);
            self.sum_up += z - self.delta;
            self.min_up = self.min_up.min(self.sum_up);
            self.sum_down += -z - self.delta;
            self.min_down = self.min_down.min(self.sum_down);
            if self.statistic() > self.lambda {
                status = Status::Drift;
            }
        }
        self.push(x);
        Ok(status)
    }

    fn clear(&mut self) {
        *self = Self::new(self.min_n, self.delta, self.lambda, self.alpha);
    }
}

use super::window::RunningStats;
use super::{Core, DetectorKind, Params, Status};
use crate::error::{Error, Result};

/// Geometric moving average of standardized deviations from the running
/// mean. Drift when the average leaves `[-lambda, lambda]`.
#[derive(Debug, Clone)]
pub struct Gma {
    min_n: usize,
    alpha: f64,
    lambda: f64,
    stats: RunningStats,
    g: f64,
}

impl Gma {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let alpha = p.unit_open("alpha", 0.99)?;
        let lambda = p.positive("lambda", 1.0)?;
        let min_n = p.count("min_n", 30, 2)?;
        if alpha >= 1.0 {
            return Err(Error::param("alpha", "must be < 1"));
        }
        Ok(Self::new(min_n, alpha, lambda))
    }

    pub fn new(min_n: usize, alpha: f64, lambda: f64) -> Self {
        Self {
            min_n,
            alpha,
            lambda,
            stats: RunningStats::default(),
            g: 0.0,
        }
    }

    pub fn statistic(&self) -> f64 {
        self.g
    }
}

impl Core for Gma {
    const KIND: DetectorKind = DetectorKind::Gma;

    fn step(&mut self, x: f64) -> Result<Status> {
        let mut status = Status::InControl;
        if self.stats.count() >= self.min_n as u64 {
            let z = self.stats.standardize(x);
            self.g = self.alpha * self.g + (1.0 - self.alpha) * z;
            if self.g.abs() > self.lambda {
                status = Status::Drift;
            }
        }
        self.stats.push(x);
        Ok(status)
    }

    fn clear(&mut self) {
        self.stats = RunningStats::default();
        self.g = 0.0;
    }
}

use super::window::RunningStats;
use super::{Core, DetectorKind, Params, Status};
use crate::error::Result;

/// Two-sided cumulative sum of standardized deviations from the running mean.
///
/// Each value is compared against the mean and standard deviation of the
/// values before it. Both polarities accumulate `max(0, g ± z - delta)`;
/// drift is declared when either sum exceeds `lambda`.
#[derive(Debug, Clone)]
pub struct Cusum {
    min_n: usize,
    delta: f64,
    lambda: f64,
    stats: RunningStats,
    g_up: f64,
    g_down: f64,
}

impl Cusum {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        Ok(Self::new(
            p.count("min_n", 30, 2)?,
            p.non_negative("delta", 0.25)?,
            p.positive("lambda", 50.0)?,
        ))
    }

    pub fn new(min_n: usize, delta: f64, lambda: f64) -> Self {
        Self {
            min_n,
            delta,
            lambda,
            stats: RunningStats::default(),
            g_up: 0.0,
            g_down: 0.0,
        }
    }

    pub fn statistic(&self) -> f64 {
        self.g_up.max(self.g_down)
    }
}

impl Core for Cusum {
    const KIND: DetectorKind = DetectorKind::Cusum;

    fn step(&mut self, x: f64) -> Result<Status> {
        let mut status = Status::InControl;
        if self.stats.count() >= self.min_n as u64 {
            let z = self.stats.standardize(x);
            self.g_up = (self.g_up + z - self.delta).max(0.0);
            self.g_down = (self.g_down - z - self.delta).max(0.0);
            if self.g_up > self.lambda || self.g_down > self.lambda {
                status = Status::Drift;
            }
        }
        self.stats.push(x);
        Ok(status)
    }

    fn clear(&mut self) {
        self.stats = RunningStats::default();
        self.g_up = 0.0;
        self.g_down = 0.0;
    }
}

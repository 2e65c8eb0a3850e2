use std::collections::VecDeque;

use super::{Core, DetectorKind, Params, Status};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Bucket {
    total: f64,
    m2: f64,
}

/// Adaptive windowing over an exponential histogram.
///
/// Row `r` holds buckets summarizing `2^r` values, newest at the back. Every
/// `clock` updates, each bucket boundary is tried as a cut between an older
/// and a newer sub-window; a mean difference above the variance-aware bound
/// signals drift.
#[derive(Debug, Clone)]
pub struct Adwin {
    delta: f64,
    max_buckets: usize,
    clock: u64,
    min_window: u64,
    rows: Vec<VecDeque<Bucket>>,
    width: u64,
    total: f64,
    m2: f64,
    tick: u64,
}

impl Adwin {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        Ok(Self::new(
            p.unit_open("delta", 0.002)?,
            p.count("max_buckets", 5, 2)?,
            p.count("clock", 32, 1)? as u64,
            p.count("min_window", 5, 1)? as u64,
        ))
    }

    pub fn new(delta: f64, max_buckets: usize, clock: u64, min_window: u64) -> Self {
        Self {
            delta,
            max_buckets,
            clock,
            min_window,
            rows: vec![VecDeque::new()],
            width: 0,
            total: 0.0,
            m2: 0.0,
            tick: 0,
        }
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn mean(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            self.total / self.width as f64
        }
    }

    pub fn bucket_count(&self) -> usize {
        self.rows.iter().map(VecDeque::len).sum()
    }

    fn insert(&mut self, x: f64) {
        if self.width > 0 {
            let w = self.width as f64;
            let d = x - self.total / w;
            self.m2 += w * d * d / (w + 1.0);
        }
        self.width += 1;
        self.total += x;
        self.rows[0].push_back(Bucket { total: x, m2: 0.0 });
        self.compress();
    }

    fn compress(&mut self) {
        let mut r = 0;
        while r < self.rows.len() {
            if self.rows[r].len() <= self.max_buckets {
                break;
            }
            let a = self.rows[r].pop_front().expect("row over capacity");
            let b = self.rows[r].pop_front().expect("row over capacity");
            let n = (1u64 << r) as f64;
            let d = a.total / n - b.total / n;
            let merged = Bucket {
                total: a.total + b.total,
                m2: a.m2 + b.m2 + n * d * d / 2.0,
            };
            if r + 1 == self.rows.len() {
                self.rows.push(VecDeque::new());
            }
            self.rows[r + 1].push_back(merged);
            r += 1;
        }
    }

    fn bound(&self, n0: u64, n1: u64) -> f64 {
        let w = self.width as f64;
        let variance = self.m2 / w;
        let dd = (2.0 * w.ln() / self.delta).ln();
        let m0 = (n0 - self.min_window + 1) as f64;
        let m1 = (n1 - self.min_window + 1) as f64;
        let m_recip = 1.0 / m0 + 1.0 / m1;
        (2.0 * m_recip * variance * dd).sqrt() + 2.0 / 3.0 * dd * m_recip
    }

    fn has_cut(&self) -> bool {
        let mut n0 = 0u64;
        let mut s0 = 0.0;
        for (r, row) in self.rows.iter().enumerate().rev() {
            let size = 1u64 << r;
            for b in row {
                n0 += size;
                s0 += b.total;
                let n1 = self.width - n0;
                if n1 < self.min_window {
                    return false;
                }
                if n0 < self.min_window {
                    continue;
                }
                let diff = s0 / n0 as f64 - (self.total - s0) / n1 as f64;
                if diff.abs() > self.bound(n0, n1) {
                    return true;
                }
            }
        }
        false
    }
}

impl Core for Adwin {
    const KIND: DetectorKind = DetectorKind::Adwin;

    fn step(&mut self, x: f64) -> Result<Status> {
        self.insert(x);
        self.tick += 1;
        if self.tick.is_multiple_of(self.clock)
            && self.width >= 2 * self.min_window
            && self.has_cut()
        {
            return Ok(Status::Drift);
        }
        Ok(Status::InControl)
    }

    fn clear(&mut self) {
        *self = Self::new(self.delta, self.max_buckets, self.clock, self.min_window);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_tracks_window_moments() {
        let mut a = Adwin::new(0.002, 5, 1_000_000, 5);
        let xs: Vec<f64> = (0..777).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        for &x in &xs {
            a.insert(x);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        assert_eq!(a.width(), 777);
        assert!((a.mean() - mean).abs() < 1e-9);
        assert!((a.m2 - m2).abs() < 1e-6 * m2);
        // per-bucket m2 should also be exact
        let bucket_sum: f64 = a.rows.iter().flatten().map(|b| b.total).sum();
        assert!((bucket_sum - a.total).abs() < 1e-9);
        // logarithmic memory
        assert!(a.bucket_count() <= 6 * 10);
    }
}

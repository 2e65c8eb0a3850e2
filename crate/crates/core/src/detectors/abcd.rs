use std::collections::VecDeque;

use super::window::SlidingMinMax;
use super::{Core, DetectorKind, Params, Status};
use crate::error::Result;

/// Bernstein-bound mean monitor.
///
/// Keeps up to `max_window` values since the last reset. On every update a
/// grid of `grid_size` candidate cut points (each side at least
/// `min_segment` long) is tested; a cut is significant when the two segment
/// means differ by more than the sum of their Bernstein radii
/// `sqrt(2 s^2 L / n) + 2 R L / (3 n)` with `L = ln(2 G / delta)` and `R`
/// the empirical range of the window.
#[derive(Debug, Clone)]
pub struct Abcd {
    delta: f64,
    min_segment: usize,
    grid_size: usize,
    max_window: usize,
    /// Values are stored relative to `origin` to limit cancellation.
    origin: Option<f64>,
    // cum[i] = sum of the first i retained values (offset by `base`)
    cum: VecDeque<f64>,
    cum_sq: VecDeque<f64>,
    range: SlidingMinMax,
    evicted: usize,
}

impl Abcd {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let delta = p.unit_open("delta", 0.05)?;
        let min_segment = p.count("min_segment", 30, 2)?;
        let grid_size = p.count("grid_size", 16, 1)?;
        let max_window = p.count("max_window", 1000, 2 * min_segment)?;
        Ok(Self::new(delta, min_segment, grid_size, max_window))
    }

    pub fn new(delta: f64, min_segment: usize, grid_size: usize, max_window: usize) -> Self {
        Self {
            delta,
            min_segment,
            grid_size,
            max_window,
            origin: None,
            cum: VecDeque::from([0.0]),
            cum_sq: VecDeque::from([0.0]),
            range: SlidingMinMax::new(max_window),
            evicted: 0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.cum.len() - 1
    }

    fn push(&mut self, x: f64) {
        let origin = *self.origin.get_or_insert(x);
        let v = x - origin;
        let s = self.cum.back().copied().unwrap_or(0.0) + v;
        let q = self.cum_sq.back().copied().unwrap_or(0.0) + v * v;
        self.cum.push_back(s);
        self.cum_sq.push_back(q);
        self.range.push(x);
        if self.window_len() > self.max_window {
            self.cum.pop_front();
            self.cum_sq.pop_front();
            self.evicted += 1;
            if self.evicted >= self.max_window {
                let (s0, q0) = (self.cum[0], self.cum_sq[0]);
                self.cum.iter_mut().for_each(|c| *c -= s0);
                self.cum_sq.iter_mut().for_each(|c| *c -= q0);
                self.evicted = 0;
            }
        }
    }

    /// Mean and sample variance of retained values in `[a, b)`.
    fn segment(&self, a: usize, b: usize) -> (f64, f64) {
        let n = (b - a) as f64;
        let s = self.cum[b] - self.cum[a];
        let q = self.cum_sq[b] - self.cum_sq[a];
        let mean = s / n;
        let var = ((q - s * mean) / (n - 1.0)).max(0.0);
        (mean, var)
    }

    fn radius(&self, n: usize, var: f64, log_term: f64, range: f64) -> f64 {
        let n = n as f64;
        (2.0 * var * log_term / n).sqrt() + 2.0 * range * log_term / (3.0 * n)
    }

    fn has_cut(&self) -> bool {
        let n = self.window_len();
        let m = self.min_segment;
        if n < 2 * m {
            return false;
        }
        let span = n - 2 * m;
        let grid = self.grid_size.min(span + 1);
        let log_term = (2.0 * grid as f64 / self.delta).ln();
        let range = self.range.range();
        (0..grid).any(|j| {
            let k = if grid == 1 {
                m + span / 2
            } else {
                m + j * span / (grid - 1)
            };
            let (ml, vl) = self.segment(0, k);
            let (mr, vr) = self.segment(k, n);
            let eps = self.radius(k, vl, log_term, range) + self.radius(n - k, vr, log_term, range);
            (ml - mr).abs() > eps
        })
    }
}

impl Core for Abcd {
    const KIND: DetectorKind = DetectorKind::Abcd;

    fn step(&mut self, x: f64) -> Result<Status> {
        self.push(x);
        Ok(if self.has_cut() {
            Status::Drift
        } else {
            Status::InControl
        })
    }

    fn clear(&mut self) {
        *self = Self::new(
            self.delta,
            self.min_segment,
            self.grid_size,
            self.max_window,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_moments_match_direct() {
        let mut a = Abcd::new(0.05, 3, 4, 20);
        let xs: Vec<f64> = (0..50).map(|i| 100.0 + ((i * 13) % 7) as f64).collect();
        for &x in &xs {
            a.push(x);
        }
        assert_eq!(a.window_len(), 20);
        let tail = &xs[30..];
        let (mean, var) = a.segment(5, 15);
        let seg = &tail[5..15];
        let m = seg.iter().sum::<f64>() / 10.0;
        let v = seg.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 9.0;
        assert!((mean + xs[0] - m).abs() < 1e-9);
        assert!((var - v).abs() < 1e-9);
    }

    #[test]
    fn detects_level_shift() {
        let mut a = Abcd::new(0.05, 30, 16, 1000);
        let mut at = None;
        for i in 0..3000 {
            let x = ((i * 7) % 10) as f64 / 10.0 + if i >= 1500 { 2.0 } else { 0.0 };
            if a.step(x).unwrap() == Status::Drift {
                at = Some(i);
                break;
            }
        }
        let at = at.unwrap();
        assert!((1500..1600).contains(&at), "{at}");
    }
}

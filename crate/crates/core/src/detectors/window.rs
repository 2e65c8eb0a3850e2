use std::collections::VecDeque;

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Deviation of `x` from the mean in standard deviations. With zero
    /// spread, any departure from the mean is infinitely far.
    pub fn standardize(&self, x: f64) -> f64 {
        let dev = x - self.mean;
        let sd = self.std();
        if sd > 0.0 {
            dev / sd
        } else if dev == 0.0 {
            0.0
        } else {
            dev.signum() * f64::INFINITY
        }
    }
}

/// Minimum and maximum over the last `len` values, amortized O(1).
#[derive(Debug, Clone)]
pub struct SlidingMinMax {
    len: usize,
    tick: u64,
    mins: VecDeque<(u64, f64)>,
    maxs: VecDeque<(u64, f64)>,
}

impl SlidingMinMax {
    pub fn new(len: usize) -> Self {
        Self {
            len: len.max(1),
            tick: 0,
            mins: VecDeque::new(),
            maxs: VecDeque::new(),
        }
    }

    pub fn push(&mut self, x: f64) {
        let t = self.tick;
        self.tick += 1;
        while self.mins.back().is_some_and(|&(_, v)| v >= x) {
            self.mins.pop_back();
        }
        self.mins.push_back((t, x));
        while self.maxs.back().is_some_and(|&(_, v)| v <= x) {
            self.maxs.pop_back();
        }
        self.maxs.push_back((t, x));
        let oldest = self.tick.saturating_sub(self.len as u64);
        while self.mins.front().is_some_and(|&(i, _)| i < oldest) {
            self.mins.pop_front();
        }
        while self.maxs.front().is_some_and(|&(i, _)| i < oldest) {
            self.maxs.pop_front();
        }
    }

    pub fn min(&self) -> Option<f64> {
        self.mins.front().map(|&(_, v)| v)
    }

    pub fn max(&self) -> Option<f64> {
        self.maxs.front().map(|&(_, v)| v)
    }

    pub fn range(&self) -> f64 {
        match (self.min(), self.max()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.mins.clear();
        self.maxs.clear();
        self.tick = 0;
    }
}

/// Maps values into [0, 1] using the min and max of a sliding window,
/// clamping values outside it. A flat or empty window maps to 0.5.
///
/// Values enter the window only after passing through a delay line of
/// `lag` values, so a level shift keeps mapping against the pre-shift range
/// for `lag` updates instead of immediately stretching the range.
#[derive(Debug, Clone)]
pub struct MinMaxRescaler {
    window: SlidingMinMax,
    delay: VecDeque<f64>,
    lag: usize,
}

impl MinMaxRescaler {
    pub fn new(len: usize, lag: usize) -> Self {
        Self {
            window: SlidingMinMax::new(len),
            delay: VecDeque::with_capacity(lag + 1),
            lag,
        }
    }

    pub fn rescale(&mut self, x: f64) -> f64 {
        self.delay.push_back(x);
        if self.delay.len() > self.lag {
            let v = self.delay.pop_front().expect("non-empty delay line");
            self.window.push(v);
        }
        match (self.window.min(), self.window.max()) {
            (Some(lo), Some(hi)) if hi > lo => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            // no history yet: compare against the values seen so far
            _ => {
                let lo = self.delay.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = self.delay.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sliding_min_max_matches_brute_force() {
        let xs: Vec<f64> = (0..300).map(|i| ((i * 7919) % 97) as f64 - 40.0).collect();
        let mut w = SlidingMinMax::new(17);
        for (i, &x) in xs.iter().enumerate() {
            w.push(x);
            let lo = i.saturating_sub(16);
            let slice = &xs[lo..=i];
            let bmin = slice.iter().cloned().fold(f64::INFINITY, f64::min);
            let bmax = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(w.min(), Some(bmin));
            assert_eq!(w.max(), Some(bmax));
        }
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.25];
        let mut s = RunningStats::default();
        xs.iter().for_each(|&x| s.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((s.mean() - mean).abs() < 1e-12);
        assert!((s.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn rescaler_bounds() {
        let mut r = MinMaxRescaler::new(3, 0);
        assert_eq!(r.rescale(5.0), 0.5);
        assert_eq!(r.rescale(7.0), 1.0);
        assert_eq!(r.rescale(6.0), 0.5);
        assert_eq!(r.rescale(4.0), 0.0);
        assert_eq!(r.rescale(9.0), 1.0);
        assert_eq!(r.rescale(5.0), 0.2);
    }
}

use super::{Core, DetectorKind, Params, Status};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
struct Block {
    sum: f64,
    n: u64,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// Block-based detector. Values are grouped into fixed-size blocks; every
/// completed block triggers a Hoeffding test at each block boundary, with
/// the confidence split across boundaries. Every `compress_term` blocks,
/// adjacent blocks whose means are indistinguishable are merged, with a
/// merge tolerance that decays linearly from the oldest pair to the newest.
#[derive(Debug, Clone)]
pub struct Seed {
    block_size: usize,
    delta: f64,
    compress_term: usize,
    blocks: Vec<Block>,
    current: Block,
    since_compress: usize,
    lo: f64,
    hi: f64,
}

impl Seed {
    pub(crate) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        Ok(Self::new(
            p.count("block_size", 32, 1)?,
            p.unit_open("delta", 0.05)?,
            p.count("compress_term", 75, 1)?,
        ))
    }

    pub fn new(block_size: usize, delta: f64, compress_term: usize) -> Self {
        Self {
            block_size,
            delta,
            compress_term,
            blocks: Vec::new(),
            current: Block::default(),
            since_compress: 0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn range(&self) -> f64 {
        if self.hi >= self.lo {
            self.hi - self.lo
        } else {
            0.0
        }
    }

    fn hoeffding(&self, n0: u64, n1: u64, delta: f64) -> f64 {
        let harmonic = 1.0 / n0 as f64 + 1.0 / n1 as f64;
        self.range() * (harmonic * (2.0 / delta).ln() / 2.0).sqrt()
    }

    fn has_cut(&self) -> bool {
        let b = self.blocks.len();
        if b < 2 {
            return false;
        }
        let total_n: u64 = self.blocks.iter().map(|b| b.n).sum();
        let total_s: f64 = self.blocks.iter().map(|b| b.sum).sum();
        let delta = self.delta / (b - 1) as f64;
        let (mut n0, mut s0) = (0u64, 0.0);
        for blk in &self.blocks[..b - 1] {
            n0 += blk.n;
            s0 += blk.sum;
            let n1 = total_n - n0;
            let diff = s0 / n0 as f64 - (total_s - s0) / n1 as f64;
            if diff.abs() > self.hoeffding(n0, n1, delta) {
                return true;
            }
        }
        false
    }

    fn compress(&mut self) {
        let b = self.blocks.len();
        if b < 2 {
            return;
        }
        let mut out: Vec<Block> = Vec::with_capacity(b);
        for (i, blk) in self.blocks.iter().enumerate() {
            if let Some(last) = out.last_mut() {
                let weight = 1.0 - (i - 1) as f64 / (b - 1) as f64;
                let tol = weight * self.hoeffding(last.n, blk.n, self.delta);
                if (last.mean() - blk.mean()).abs() <= tol {
                    last.sum += blk.sum;
                    last.n += blk.n;
                    continue;
                }
            }
            out.push(*blk);
        }
        self.blocks = out;
    }
}

impl Core for Seed {
    const KIND: DetectorKind = DetectorKind::Seed;

    fn step(&mut self, x: f64) -> Result<Status> {
        self.lo = self.lo.min(x);
        self.hi = self.hi.max(x);
        self.current.sum += x;
        self.current.n += 1;
        if self.current.n < self.block_size as u64 {
            return Ok(Status::InControl);
        }
        self.blocks.push(std::mem::take(&mut self.current));
        if self.has_cut() {
            return Ok(Status::Drift);
        }
        self.since_compress += 1;
        if self.since_compress >= self.compress_term {
            self.compress();
            self.since_compress = 0;
        }
        Ok(Status::InControl)
    }

    fn clear(&mut self) {
        *self = Self::new(self.block_size, self.delta, self.compress_term);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compression_merges_homogeneous_history() {
        let mut s = Seed::new(8, 0.05, 10);
        for i in 0..8 * 40 {
            let x = (i % 8) as f64;
            assert_eq!(s.step(x).unwrap(), Status::InControl);
        }
        // every block has the same mean, so compression collapses the history
        assert!(s.block_count() < 40, "{}", s.block_count());
    }

    #[test]
    fn detects_level_shift() {
        let mut s = Seed::new(32, 0.05, 75);
        let mut at = None;
        for i in 0..4000 {
            let x = ((i * 7) % 10) as f64 / 10.0 + if i >= 2000 { 2.0 } else { 0.0 };
            if s.step(x).unwrap() == Status::Drift {
                at = Some(i);
                break;
            }
        }
        let at = at.unwrap();
        assert!((2000..2200).contains(&at), "{at}");
    }
}

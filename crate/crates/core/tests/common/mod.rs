#![allow(dead_code)]

use myodrift_core::stream::{Sample, SignalStream};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect()
}

pub fn domain_stream(
    rows: &[Vec<f64>],
    fs: f64,
    subject: u32,
    period: u32,
    grasp: i32,
) -> SignalStream {
    let k = rows.first().map_or(1, Vec::len);
    let samples = rows
        .iter()
        .enumerate()
        .map(|(i, r)| Sample {
            channels: r.clone(),
            subject,
            period,
            grasp,
            index: i,
        })
        .collect();
    let names = (1..=k).map(|c| format!("emg_{c}")).collect();
    SignalStream::new(samples, fs, names).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

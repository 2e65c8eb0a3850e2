//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{domain_stream, normal_rows, rel_err, rng};
use myodrift_core::detectors::{drift_indices, DetectorConfig, DetectorKind};
use myodrift_core::distribution::{
    kl_gaussian, GaussianModel, RidgePolicy, RollingReference, ScoreUpdate,
};
use myodrift_core::eval::{
    add_seconds, f1, match_detections, render_report, MatchResult, REPORT_HEADER,
};
use myodrift_core::experiment::{run_experiment, ExperimentConfig};
use myodrift_core::kpca::{
    center_kernel, cosine_kernel_matrix, kpca_fit_project, separability_score, symmetric_eigen,
};
use myodrift_core::preprocess::{
    ols_slope, rms_extract, slope_features, RmsStreamer, SlopeStreamer, SlopeVector,
};
use myodrift_core::stream::{Timeline, TimelineParams};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

type Check = Result<String, String>;
type NamedCheck = (&'static str, fn() -> Check);

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_spd(r: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.3
}

/// Log-density of N(mean, cov) from an explicit inverse and determinant.
fn log_density(x: &DVector<f64>, mean: &DVector<f64>, inv: &DMatrix<f64>, det: f64) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    -0.5 * (diff.dot(&(inv * &diff)) + det.ln() + d * (2.0 * std::f64::consts::PI).ln())
}

fn kl_monte_carlo() -> Check {
    let start = Instant::now();
    let mut r = rng(2024);
    let draws = 200_000;
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < 5 {
        let (m0, m1) = (
            DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0)),
            DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0)),
        );
        let (c0, c1) = (random_spd(&mut r, 2), random_spd(&mut r, 2));
        let g0 = GaussianModel::from_moments(m0.clone(), c0.clone(), 1000, RidgePolicy::Disabled)
            .map_err(|e| e.to_string())?;
        let g1 = GaussianModel::from_moments(m1.clone(), c1.clone(), 1000, RidgePolicy::Disabled)
            .map_err(|e| e.to_string())?;
        let kl = kl_gaussian(&g0, &g1).map_err(|e| e.to_string())?;
        if kl > 2.0 {
            continue;
        }
        pairs += 1;
        let l = c0.clone().cholesky().unwrap().l();
        let (i0, i1) = (
            c0.clone().try_inverse().unwrap(),
            c1.clone().try_inverse().unwrap(),
        );
        let (d0, d1) = (c0.determinant(), c1.determinant());
        let mut acc = 0.0;
        for _ in 0..draws {
            let z = DVector::from_fn(2, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal));
            let x = &m0 + &l * z;
            acc += log_density(&x, &m0, &i0, d0) - log_density(&x, &m1, &i1, d1);
        }
        worst = worst.max((acc / draws as f64 - kl).abs());
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= 0.05 && elapsed < Duration::from_secs(10),
        format!(
            "max |closed - MC| = {worst:.4} over 5 pairs in {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn hand_values() -> Check {
    let g = |m: f64, v: f64| {
        GaussianModel::from_moments(
            DVector::from_element(1, m),
            DMatrix::from_element(1, 1, v),
            100,
            RidgePolicy::Disabled,
        )
        .unwrap()
    };
    let kl_a = kl_gaussian(&g(0.0, 1.0), &g(1.0, 1.0)).unwrap();
    let kl_b = kl_gaussian(&g(0.0, 1.0), &g(0.0, 2.0)).unwrap();
    let kl_b_want = 0.5 * (0.5 - 1.0 + 2f64.ln());

    // 2-sample windows at 1 kHz
    let tl = Timeline::new(
        1000.0,
        TimelineParams {
            rms_window_ms: 2.0,
            rms_stride_ms: 2.0,
            slope_window_frames: 2,
            slope_stride_frames: 1,
        },
    )
    .unwrap();
    let rms = rms_extract(
        &domain_stream(&[vec![3.0], vec![4.0]], 1000.0, 1, 1, 1),
        &tl,
    )[0]
    .values[0];
    let slope = ols_slope((0..20).map(|k| 2.0 * k as f64 + 1.0));
    let f = f1(&MatchResult {
        tp: 1,
        fp: 1,
        fn_: 0,
        delays_seconds: vec![],
    });
    let add =
        add_seconds(&match_detections(&[10.0, 20.0], &[12.0, 24.0], 10.0)).unwrap_or(f64::NAN);

    let checks = [
        ("kl_shift", kl_a, 0.5),
        ("kl_var", kl_b, kl_b_want),
        ("rms", rms, 12.5f64.sqrt()),
        ("slope", slope, 2.0),
        ("f1", f, 2.0 / 3.0),
        ("add", add, 3.0),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs().is_nan() || (got - want).abs() > 1e-9)
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("kl={kl_a:.6},{kl_b:.6} rms={rms:.6} slope={slope} f1={f:.6} add={add}")
        } else {
            bad.join("; ")
        },
    )
}

fn mahalanobis_oracle() -> Check {
    let mut r = rng(77);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = 1 + case % 5;
        let capacity = 30;
        let pushes = r.random_range(d + 2..70);
        let rows = normal_rows(1000 + case as u64, pushes + 1, d);
        let mut reference =
            RollingReference::new(capacity, RidgePolicy::Auto).map_err(|e| e.to_string())?;
        let mut last = None;
        for (i, row) in rows.iter().enumerate() {
            let v = SlopeVector {
                slopes: row.clone(),
                window_index: i,
                t_seconds: i as f64,
            };
            last = Some(reference.update(&v).map_err(|e| e.to_string())?);
        }
        let Some(ScoreUpdate::Scored(p)) = last else {
            return Err(format!("case {case}: final vector not scored"));
        };
        // brute force over the buffer the last vector was scored against
        let buf = &rows[pushes.saturating_sub(capacity)..pushes];
        let n = buf.len() as f64;
        let mean = buf.iter().fold(DVector::zeros(d), |acc, x| {
            acc + DVector::from_column_slice(x)
        }) / n;
        let mut cov = DMatrix::zeros(d, d);
        for x in buf {
            let dx = DVector::from_column_slice(x) - &mean;
            cov += &dx * dx.transpose();
        }
        cov /= n - 1.0;
        let eps = (1e-6 * cov.trace() / d as f64).max(1e-9);
        let inv = (cov + DMatrix::identity(d, d) * eps).try_inverse().unwrap();
        let diff = DVector::from_column_slice(&rows[pushes]) - mean;
        let want = diff.dot(&(inv * &diff)).sqrt();
        worst = worst.max(rel_err(p.score, want));
    }
    ensure(
        worst <= 1e-8,
        format!("max relative error {worst:.2e} over 100 cases"),
    )
}

fn shifted_stream(seed: u64) -> Vec<f64> {
    let mut v: Vec<f64> = normal_rows(seed, 2000, 1)
        .into_iter()
        .map(|r| r[0])
        .collect();
    for x in &mut v[1000..] {
        *x += 3.0;
    }
    v
}

fn detector_suite() -> Check {
    let recall_kinds = [
        DetectorKind::Cusum,
        DetectorKind::PageHinkley,
        DetectorKind::Adwin,
        DetectorKind::HddmA,
        DetectorKind::HddmW,
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for kind in recall_kinds {
        let cfg = DetectorConfig::new(kind);
        let hits = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let idx = drift_indices(&cfg, &shifted_stream(seed)).unwrap();
                idx.iter().any(|&i| (1000..1500).contains(&i))
            })
            .filter(|&h| h)
            .count();
        pass &= hits >= 19;
        notes.push(format!("{}:{hits}/20", kind.name()));
    }
    let mut worst = Vec::new();
    for kind in DetectorKind::ALL {
        let cfg = DetectorConfig::new(kind);
        let max_alarms = (0..10u64)
            .into_par_iter()
            .map(|seed| {
                let v: Vec<f64> = normal_rows(500 + seed, 100_000, 1)
                    .into_iter()
                    .map(|r| r[0])
                    .collect();
                drift_indices(&cfg, &v).unwrap().len()
            })
            .max()
            .unwrap();
        pass &= max_alarms <= 5;
        worst.push(format!("{}:{max_alarms}", kind.name()));
    }
    ensure(
        pass,
        format!(
            "recall [{}] max false alarms [{}]",
            notes.join(" "),
            worst.join(" ")
        ),
    )
}

fn kpca_checks() -> Check {
    let rows = normal_rows(9, 200, 10);
    let kc = center_kernel(&cosine_kernel_matrix(&rows).map_err(|e| e.to_string())?);
    let fro = kc.norm();
    let (values, vectors) = symmetric_eigen(&kc).map_err(|e| e.to_string())?;
    let residual = (0..values.len())
        .map(|c| (&kc * vectors.column(c) - vectors.column(c) * values[c]).norm())
        .fold(0.0, f64::max);
    let mut oracle: Vec<f64> = SymmetricEigen::new(kc.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    oracle.sort_by(|a, b| b.total_cmp(a));
    let spectrum_gap = values
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // two tight clusters around u and -u
    let mut r = rng(31);
    let u: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60 {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        pts.push(
            u.iter()
                .map(|x| sign * x + r.random_range(-0.3..0.3))
                .collect::<Vec<f64>>(),
        );
        labels.push(i % 2 == 0);
    }
    let (_, y) = kpca_fit_project(&pts, 3).map_err(|e| e.to_string())?;
    let acc = separability_score(&y, &labels)
        .map_err(|e| e.to_string())?
        .accuracy;

    let scaled: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().map(|x| x * (0.01 + i as f64)).collect())
        .collect();
    let (_, y0) = kpca_fit_project(&rows, 3).map_err(|e| e.to_string())?;
    let (_, y1) = kpca_fit_project(&scaled, 3).map_err(|e| e.to_string())?;
    let scale_gap = (y0 - y1).amax();

    ensure(
        residual <= 1e-8 * fro && spectrum_gap <= 1e-8 * fro && acc == 1.0 && scale_gap <= 1e-9,
        format!(
            "residual/|K'|={:.2e} oracle gap/|K'|={:.2e} accuracy={acc} scaling change={scale_gap:.2e}",
            residual / fro,
            spectrum_gap / fro
        ),
    )
}

fn fixture_report(name: &str) -> Result<(String, Duration), String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
    let outcome = run_experiment(&cfg).map_err(|e| e.to_string())?;
    if let Some(f) = outcome.failures.first() {
        return Err(f.to_string());
    }
    Ok((render_report(&outcome.rows), start.elapsed()))
}

fn best_f1(report: &str, detector: Option<&str>) -> f64 {
    report
        .lines()
        .skip(1)
        .filter_map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (detector.is_none_or(|d| d == cols[0])).then(|| cols[5].parse::<f64>().unwrap())
        })
        .fold(0.0, f64::max)
}

fn end_to_end() -> Check {
    let (a, elapsed) = fixture_report("synth_experiment.json")?;
    let (b, _) = fixture_report("synth_experiment.json")?;
    let lines: Vec<&str> = a.lines().collect();
    let per_grasp = |g: &str| {
        lines
            .iter()
            .skip(1)
            .filter(|l| l.split(',').nth(1) == Some(g))
            .count()
    };
    let shape = lines[0] == REPORT_HEADER
        && per_grasp("1") == 9
        && per_grasp("2") == 9
        && lines.len() == 19;
    let f1_signal = best_f1(&a, None);
    let (steps, _) = fixture_report("score_steps.json")?;
    let f1_steps = best_f1(&steps, Some("HDDM_A"));
    ensure(
        elapsed < Duration::from_secs(60) && shape && a == b && f1_signal >= 0.5 && f1_steps >= 0.5,
        format!(
            "{:.2}s rows={} identical={} best F1={f1_signal:.3} score-steps HDDM_A F1={f1_steps:.3}",
            elapsed.as_secs_f64(),
            lines.len() - 1,
            a == b
        ),
    )
}

fn streaming_equivalence() -> Check {
    let rows = normal_rows(4242, 10_000, 8);
    let tl = Timeline::new(
        2000.0,
        TimelineParams {
            slope_window_frames: 60,
            slope_stride_frames: 20,
            ..TimelineParams::default()
        },
    )
    .unwrap();
    let batch = rms_extract(&domain_stream(&rows, 2000.0, 1, 1, 1), &tl);
    let batch_slopes = slope_features(&batch, &tl);
    let mut rs = RmsStreamer::new(tl);
    let mut ss = SlopeStreamer::new(tl);
    let (mut frames, mut slopes) = (Vec::new(), Vec::new());
    for r in &rows {
        if let Some(f) = rs.push(r).map_err(|e| e.to_string())? {
            if let Some(s) = ss.push(&f).map_err(|e| e.to_string())? {
                slopes.push(s);
            }
            frames.push(f);
        }
    }
    if frames.len() != batch.len() || slopes.len() != batch_slopes.len() || slopes.is_empty() {
        return Err(format!(
            "count mismatch: {} vs {} frames, {} vs {} slopes",
            frames.len(),
            batch.len(),
            slopes.len(),
            batch_slopes.len()
        ));
    }
    let rms_err = frames
        .iter()
        .zip(&batch)
        .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| rel_err(*x, *y)))
        .fold(0.0, f64::max);
    let scale = batch_slopes
        .iter()
        .flat_map(|s| s.slopes.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let slope_err = slopes
        .iter()
        .zip(&batch_slopes)
        .flat_map(|(a, b)| {
            a.slopes
                .iter()
                .zip(&b.slopes)
                .map(|(x, y)| (x - y).abs() / scale)
        })
        .fold(0.0, f64::max);
    ensure(
        rms_err <= 1e-10 && slope_err <= 1e-10,
        format!(
            "{} frames rel err {rms_err:.1e}, {} slope windows rel err {slope_err:.1e}",
            frames.len(),
            slopes.len()
        ),
    )
}

fn main() {
    let checks: [NamedCheck; 7] = [
        ("kl_closed_form_vs_monte_carlo", kl_monte_carlo),
        ("hand_values", hand_values),
        ("mahalanobis_vs_explicit_inverse", mahalanobis_oracle),
        ("detector_recall_and_false_alarms", detector_suite),
        ("kpca_eigen_separability_scaling", kpca_checks),
        ("end_to_end_determinism_and_shape", end_to_end),
        ("streaming_vs_batch_features", streaming_equivalence),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

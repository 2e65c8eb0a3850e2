mod common;

use common::{domain_stream, normal_rows, rel_err};
use myodrift_core::detectors::{drift_indices, DetectorConfig, DetectorKind};
use myodrift_core::distribution::{kl_gaussian, GaussianModel, RidgePolicy};
use myodrift_core::eval::{f1, match_detections, MatchResult};
use myodrift_core::kpca::{cosine_kernel_matrix, kpca_fit_project};
use myodrift_core::preprocess::{
    ols_slope, rms_extract, slope_features, RmsStreamer, SlopeStreamer,
};
use myodrift_core::stream::{
    concat_domains, drop_zero_channels, load_signal_csv, write_signal_csv, Timeline, TimelineParams,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_timeline() -> Timeline {
    Timeline::new(
        100.0,
        TimelineParams {
            rms_window_ms: 200.0,
            rms_stride_ms: 20.0,
            slope_window_frames: 15,
            slope_stride_frames: 5,
        },
    )
    .unwrap()
}

fn transform(rows: &[Vec<f64>], a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            (a * DVector::from_column_slice(r) + b)
                .iter()
                .copied()
                .collect()
        })
        .collect()
}

fn well_conditioned(d: usize, seed: u64) -> DMatrix<f64> {
    let noise = normal_rows(seed, d, d);
    DMatrix::from_fn(
        d,
        d,
        |i, j| if i == j { 2.0 } else { 0.0 } + 0.3 * noise[i][j],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rms_is_scale_equivariant(seed in 0u64..1000, c in -5.0f64..5.0) {
        let rows = normal_rows(seed, 200, 3);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
        let tl = small_timeline();
        let a = rms_extract(&domain_stream(&rows, 100.0, 1, 1, 1), &tl);
        let b = rms_extract(&domain_stream(&scaled, 100.0, 1, 1, 1), &tl);
        for (fa, fb) in a.iter().zip(&b) {
            for (x, y) in fa.values.iter().zip(&fb.values) {
                prop_assert!((c.abs() * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn slope_is_affine_equivariant(ys in prop::collection::vec(-100.0f64..100.0, 2..60), c in -3.0f64..3.0, d in -50.0f64..50.0) {
        let base = ols_slope(ys.iter().copied());
        let moved = ols_slope(ys.iter().map(|y| c * y + d));
        prop_assert!((moved - c * base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn streaming_features_match_batch(seed in 0u64..1000) {
        let rows = normal_rows(seed, 600, 4);
        let tl = small_timeline();
        let batch_rms = rms_extract(&domain_stream(&rows, 100.0, 1, 1, 1), &tl);
        let batch_slopes = slope_features(&batch_rms, &tl);
        let mut rs = RmsStreamer::new(tl);
        let mut ss = SlopeStreamer::new(tl);
        let mut frames = Vec::new();
        let mut slopes = Vec::new();
        for r in &rows {
            if let Some(f) = rs.push(r).unwrap() {
                if let Some(s) = ss.push(&f).unwrap() {
                    slopes.push(s);
                }
                frames.push(f);
            }
        }
        prop_assert_eq!(frames.len(), batch_rms.len());
        prop_assert_eq!(slopes.len(), batch_slopes.len());
        for (a, b) in frames.iter().zip(&batch_rms) {
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(rel_err(*x, *y) <= 1e-10);
            }
        }
        for (a, b) in slopes.iter().zip(&batch_slopes) {
            for (x, y) in a.slopes.iter().zip(&b.slopes) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn mahalanobis_is_affine_invariant(seed in 0u64..1000, d in 1usize..5) {
        let rows = normal_rows(seed, 40, d);
        let probe = normal_rows(seed + 7, 1, d).remove(0);
        let a = well_conditioned(d, seed + 1);
        let b = DVector::from_fn(d, |i, _| i as f64 - 1.5);
        let g = GaussianModel::fit(&rows, RidgePolicy::Disabled).unwrap();
        let gt = GaussianModel::fit(&transform(&rows, &a, &b), RidgePolicy::Disabled).unwrap();
        let x = g.mahalanobis(&probe).unwrap();
        let y = gt.mahalanobis(&transform(&[probe], &a, &b)[0]).unwrap();
        prop_assert!(rel_err(y, x) <= 1e-6);
    }

    #[test]
    fn kl_is_affine_invariant(seed in 0u64..1000, d in 1usize..4) {
        let r0 = normal_rows(seed, 50, d);
        let r1: Vec<Vec<f64>> = normal_rows(seed + 100, 50, d)
            .into_iter()
            .map(|r| r.iter().map(|v| 1.5 * v + 0.5).collect())
            .collect();
        let a = well_conditioned(d, seed + 2);
        let b = DVector::from_element(d, 3.0);
        let kl = kl_gaussian(
            &GaussianModel::fit(&r0, RidgePolicy::Disabled).unwrap(),
            &GaussianModel::fit(&r1, RidgePolicy::Disabled).unwrap(),
        ).unwrap();
        let klt = kl_gaussian(
            &GaussianModel::fit(&transform(&r0, &a, &b), RidgePolicy::Disabled).unwrap(),
            &GaussianModel::fit(&transform(&r1, &a, &b), RidgePolicy::Disabled).unwrap(),
        ).unwrap();
        prop_assert!(rel_err(klt, kl) <= 1e-6);
    }

    #[test]
    fn kernel_entries_are_bounded(seed in 0u64..1000) {
        let rows = normal_rows(seed, 20, 5);
        let k = cosine_kernel_matrix(&rows).unwrap();
        for i in 0..20 {
            prop_assert!((k.as_matrix()[(i, i)] - 1.0).abs() <= 1e-12);
            for j in 0..20 {
                prop_assert!(k.as_matrix()[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn kpca_ignores_row_scaling(seed in 0u64..1000) {
        let rows = normal_rows(seed, 30, 6);
        let scales = normal_rows(seed + 1, 30, 1);
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .zip(&scales)
            .map(|(r, s)| r.iter().map(|v| v * (0.1 + s[0].abs() * 5.0)).collect())
            .collect();
        let (_, y) = kpca_fit_project(&rows, 3).unwrap();
        let (_, ys) = kpca_fit_project(&scaled, 3).unwrap();
        prop_assert!((y - ys).amax() <= 1e-9);
    }

    #[test]
    fn kpca_is_permutation_equivariant(seed in 0u64..1000, shift in 1usize..29) {
        let rows = normal_rows(seed, 30, 6);
        let perm: Vec<usize> = (0..30).map(|i| (i + shift) % 30).collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let (_, y) = kpca_fit_project(&rows, 3).unwrap();
        let (_, yp) = kpca_fit_project(&permuted, 3).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..3 {
                prop_assert!((yp[(new, c)] - y[(old, c)]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn matching_counts_are_consistent(
        truths in prop::collection::vec(0.0f64..500.0, 0..12),
        dets in prop::collection::vec(0.0f64..500.0, 0..12),
        w in 0.5f64..20.0,
    ) {
        let m = match_detections(&truths, &dets, w);
        prop_assert_eq!(m.tp + m.fn_, truths.len());
        prop_assert_eq!(m.tp + m.fp, dets.len());
        prop_assert_eq!(m.delays_seconds.len(), m.tp);
        prop_assert!(m.delays_seconds.iter().all(|&d| (0.0..=w).contains(&d)));
        let mut rt = truths.clone();
        rt.reverse();
        let mut rd = dets.clone();
        rd.reverse();
        prop_assert_eq!(match_detections(&rt, &rd, w), m);
    }

    #[test]
    fn f1_rewards_turning_fp_into_tp(tp in 0usize..50, fp in 1usize..50, fn_ in 0usize..50) {
        let before = MatchResult { tp, fp, fn_, delays_seconds: vec![] };
        let after = MatchResult { tp: tp + 1, fp: fp - 1, fn_, delays_seconds: vec![] };
        prop_assert!(f1(&after) >= f1(&before));
    }

    #[test]
    fn concat_preserves_counts(lens in prop::collection::vec(1usize..40, 1..5)) {
        let streams: Vec<_> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| domain_stream(&normal_rows(i as u64, n, 2), 10.0, 1, i as u32 + 1, 1))
            .collect();
        let (all, truth) = concat_domains(&streams).unwrap();
        prop_assert_eq!(all.len(), lens.iter().sum::<usize>());
        prop_assert_eq!(truth.len(), lens.len() - 1);
    }

    #[test]
    fn drop_zero_channels_is_idempotent(seed in 0u64..1000, zero_mask in prop::collection::vec(any::<bool>(), 4)) {
        prop_assume!(zero_mask.iter().any(|z| !z));
        let rows: Vec<Vec<f64>> = normal_rows(seed, 20, 4)
            .into_iter()
            .map(|r| r.iter().zip(&zero_mask).map(|(v, &z)| if z { 0.0 } else { *v }).collect())
            .collect();
        let (once, _) = drop_zero_channels(&domain_stream(&rows, 10.0, 1, 1, 1)).unwrap();
        let (twice, dropped) = drop_zero_channels(&once).unwrap();
        prop_assert!(dropped.is_empty());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn cusum_threshold_is_monotone(seed in 0u64..200, lo in 5.0f64..40.0, gap in 0.0f64..40.0) {
        let mut values: Vec<f64> = normal_rows(seed, 3000, 1).into_iter().map(|r| r[0]).collect();
        for v in &mut values[1500..] {
            *v += 2.0;
        }
        let run = |lambda: f64| {
            drift_indices(&DetectorConfig::new(DetectorKind::Cusum).with("lambda", lambda), &values).unwrap().len()
        };
        prop_assert!(run(lo) >= run(lo + gap));
    }
}

#[test]
fn signal_csv_round_trips() {
    let rows = normal_rows(5, 50, 3);
    let s = domain_stream(&rows, 2000.0, 3, 4, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_signal_csv(&s, &path).unwrap();
    let back = load_signal_csv(&path, 2000.0).unwrap();
    assert_eq!(back.len(), s.len());
    for (a, b) in back.samples().iter().zip(s.samples()) {
        assert_eq!(
            (a.subject, a.period, a.grasp),
            (b.subject, b.period, b.grasp)
        );
        for (x, y) in a.channels.iter().zip(&b.channels) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn timeline_is_monotone() {
    let tl = Timeline::with_defaults(2000.0).unwrap();
    for i in 0..1000 {
        assert!(tl.sample_time(i) < tl.sample_time(i + 1));
        assert!(tl.frame_time(i) < tl.frame_time(i + 1));
        assert!(tl.slope_time(i) < tl.slope_time(i + 1));
    }
}

#[test]
fn detectors_are_deterministic() {
    let values: Vec<f64> = normal_rows(11, 5000, 1)
        .into_iter()
        .map(|r| r[0] + 0.001 * r[0].abs())
        .collect();
    for kind in DetectorKind::ALL {
        let cfg = DetectorConfig::new(kind);
        assert_eq!(
            drift_indices(&cfg, &values).unwrap(),
            drift_indices(&cfg, &values).unwrap(),
            "{kind:?}"
        );
    }
}

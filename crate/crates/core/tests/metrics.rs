mod common;

use common::metric_oracles::{self, random_motion, smooth_motion, spec};
use common::rng;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::Rng;
use sinmotion::metrics::*;
use sinmotion::Result;

#[test]
fn coverage_matches_brute_force() {
    metric_oracles::coverage_matches_brute_force();
}

#[test]
fn default_tau_is_percentile_of_self_distances() {
    metric_oracles::default_tau_is_percentile_of_self_distances();
}

#[test]
fn percentile_hand_values() {
    metric_oracles::percentile_hand_values();
}

#[test]
fn global_diversity_matches_exhaustive_tessellation() {
    metric_oracles::global_diversity_matches_exhaustive_tessellation();
}

#[test]
fn diversity_values_match_brute_force() {
    metric_oracles::diversity_values_match_brute_force();
}

#[test]
fn harmonic_mean_hand_vectors() {
    metric_oracles::harmonic_mean_hand_vectors();
}

#[test]
fn copies_of_the_input_score_perfectly() {
    let input = smooth_motion(45, 3, 7);
    let s = spec(15, 1);
    assert_eq!(coverage(&input, std::slice::from_ref(&input), &s, 0.0).unwrap(), 100.0);
    assert_eq!(global_diversity(&input, &input, &s).unwrap(), 0.0);
    assert_eq!(local_diversity(&input, &input, &s).unwrap(), 0.0);
    assert_eq!(
        intra_diversity_diff(&input, std::slice::from_ref(&input), &s).unwrap(),
        0.0
    );
    assert_eq!(pair_diversity(&input, &input, &s).unwrap(), 0.0);
}

#[test]
fn evaluate_reports_consistent_values() {
    let input = smooth_motion(60, 3, 9);
    let gens: Vec<Array2<f64>> = (0..4).map(|k| smooth_motion(60, 3, 30 + k)).collect();
    let cfg = EvalConfig::default();
    let rep = evaluate(&input, &gens, &cfg).unwrap();
    let s = cfg.window;
    assert_eq!(rep.tau, default_tau(&input, &s).unwrap());
    assert_eq!(rep.coverage, coverage(&input, &gens, &s, rep.tau).unwrap());
    let gd: f64 = gens
        .iter()
        .map(|g| global_diversity(&input, g, &s).unwrap())
        .sum::<f64>()
        / 4.0;
    assert!((rep.global_diversity - gd).abs() < 1e-12);
    assert_eq!(rep.inter_diversity.unwrap(), inter_diversity(&gens, &s).unwrap());
    assert_eq!(rep.normalization.len(), 5);
    let hm = harmonic_mean_of(&rep.normalization.iter().map(|n| n.score).collect::<Vec<_>>()).unwrap();
    assert_eq!(rep.harmonic_mean, hm);
    let single = evaluate(&input, &gens[..1], &cfg).unwrap();
    assert!(single.inter_diversity.is_none());
    assert_eq!(single.normalization.len(), 4);
    let mut csv = Vec::new();
    rep.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    assert!(evaluate(&input, &[], &cfg).is_err());
    assert!(evaluate(&input, &[random_motion(60, 2, 0)], &cfg).is_err());
}

/// Square root of a matrix with positive spectrum by Denman–Beavers
/// iteration.
fn sqrtm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (mut y, mut z) = (a.clone(), DMatrix::identity(n, n));
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        y = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
    }
    y
}

fn fit(x: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let data = DMatrix::from_fn(x.len(), d, |i, j| x[i][j]);
    let mu = data.row_mean();
    let c = DMatrix::from_fn(x.len(), d, |i, j| x[i][j] - mu[j]);
    (mu.transpose(), c.transpose() * c / (n - 1.0))
}

#[test]
fn frechet_matches_denman_beavers() {
    let mut r = rng(12);
    for d in [1, 2, 4] {
        let a: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                (0..d)
                    .map(|k| 0.5 + (k as f64 + 1.0) * r.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let ((ma, ca), (mb, cb)) = (fit(&a), fit(&b));
        let cross = sqrtm(&(&ca * &cb));
        let want = (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross.trace();
        let got = frechet_distance(&a, &b).unwrap();
        assert!(
            (got - want).abs() < 1e-9 * want.abs().max(1.0),
            "d={d}: {got} vs {want}"
        );
    }
}

#[test]
fn frechet_one_dimensional_closed_form() {
    let a: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![v]).collect();
    let b: Vec<Vec<f64>> = [0.0, 4.0, 8.0].iter().map(|&v| vec![v]).collect();
    // Means 2.5 and 4; unbiased variances 5/3 and 16.
    let want = (2.5f64 - 4.0).powi(2) + ((5.0f64 / 3.0).sqrt() - 4.0).powi(2);
    assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-12);
    assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-12);
    assert!(frechet_distance(&a[..1], &b).is_err());
}

struct MeanAndSpread;

impl FeatureExtractor for MeanAndSpread {
    fn embed(&self, w: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mean = w.mean().unwrap_or(0.0);
        let spread = w.iter().map(|v| (v - mean).abs()).sum::<f64>() / w.len() as f64;
        Ok(vec![mean, spread])
    }
}

#[test]
fn sifid_with_custom_extractor() {
    let input = smooth_motion(50, 2, 13);
    let s = spec(10, 1);
    assert!(
        sifid(&MeanAndSpread, &input, std::slice::from_ref(&input), &s)
            .unwrap()
            .abs()
            < 1e-9
    );
    let other = smooth_motion(50, 2, 14).mapv(|v| v * 3.0 + 2.0);
    assert!(sifid(&MeanAndSpread, &input, &[other], &s).unwrap() > 1.0);
}

#[test]
fn invalid_windows_are_rejected() {
    let m = random_motion(10, 2, 0);
    assert!(coverage(&m, std::slice::from_ref(&m), &spec(11, 1), 1.0).is_err());
    assert!(coverage(&m, std::slice::from_ref(&m), &spec(0, 1), 1.0).is_err());
    assert!(coverage(&m, std::slice::from_ref(&m), &spec(3, 0), 1.0).is_err());
    assert!(coverage(&m, &[], &spec(3, 1), 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coverage_is_a_monotone_percentage(seed in 0u64..1000, len in 1usize..8, t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        let input = random_motion(20, 2, seed);
        let gens = vec![random_motion(16, 2, seed + 1), random_motion(18, 2, seed + 2)];
        let s = spec(len, 1);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let (a, b) = (coverage(&input, &gens, &s, lo).unwrap(), coverage(&input, &gens, &s, hi).unwrap());
        prop_assert!((0.0..=100.0).contains(&a) && (0.0..=100.0).contains(&b));
        prop_assert!(a <= b);
    }

    #[test]
    fn window_distance_is_a_metric(seed in 0u64..1000, len in 1usize..6) {
        let a = random_motion(12, 3, seed);
        let b = random_motion(12, 3, seed + 1);
        let c = random_motion(12, 3, seed + 2);
        let d = |x: &Array2<f64>, y: &Array2<f64>| window_distance(x.view(), 2, y.view(), 4, len);
        prop_assert_eq!(window_distance(a.view(), 3, a.view(), 3, len), 0.0);
        prop_assert!((window_distance(a.view(), 2, b.view(), 4, len) - window_distance(b.view(), 4, a.view(), 2, len)).abs() < 1e-12);
        let ab = d(&a, &b);
        let bc = window_distance(b.view(), 4, c.view(), 4, len);
        let ac = window_distance(a.view(), 2, c.view(), 4, len);
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn pair_diversity_is_symmetric_and_nonnegative(seed in 0u64..1000, len in 1usize..6) {
        let a = random_motion(15, 2, seed);
        let b = random_motion(19, 2, seed + 7);
        let s = spec(len, 1);
        let (x, y) = (pair_diversity(&a, &b, &s).unwrap(), pair_diversity(&b, &a, &s).unwrap());
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!(x >= 0.0);
    }

    #[test]
    fn percentile_lies_between_extremes(v in prop::collection::vec(-100.0f64..100.0, 1..40), p in 0.0f64..100.0) {
        let q = percentile(&v, p).unwrap();
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!(lo <= q && q <= hi);
    }

    #[test]
    fn harmonic_mean_lies_between_minimum_and_mean(v in prop::collection::vec(0.01f64..1.0, 1..8)) {
        let hm = harmonic_mean_of(&v).unwrap();
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!(hm >= min - 1e-12 && hm <= mean + 1e-12);
    }
}

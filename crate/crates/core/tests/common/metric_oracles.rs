//! Brute-force oracles for the window metrics, shared by the metric tests
//! and the acceptance suite. Each check panics on failure.

use ndarray::Array2;
use rand::Rng;
use sinmotion::metrics::*;

use super::rng;

pub fn random_motion(n: usize, f: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, f), |_| r.random_range(-1.0..1.0))
}

/// A random walk, so that nearby windows are similar.
pub fn smooth_motion(n: usize, f: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let mut m = Array2::zeros((n, f));
    for i in 1..n {
        for c in 0..f {
            m[[i, c]] = m[[i - 1, c]] + r.random_range(-0.3..0.3);
        }
    }
    m
}

pub fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Window distance computed on plain vectors.
pub fn dist(a: &[Vec<f64>], a0: usize, b: &[Vec<f64>], b0: usize, len: usize) -> f64 {
    (0..len)
        .map(|i| {
            a[a0 + i]
                .iter()
                .zip(&b[b0 + i])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / len as f64
}

pub fn window_starts(n: usize, len: usize, stride: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut s = 0;
    while s + len <= n {
        v.push(s);
        s += stride;
    }
    v
}

pub fn nearest(a: &[Vec<f64>], a0: usize, b: &[Vec<f64>], len: usize, stride: usize) -> f64 {
    window_starts(b.len(), len, stride)
        .into_iter()
        .map(|b0| dist(a, a0, b, b0, len))
        .fold(f64::INFINITY, f64::min)
}

pub fn spec(window_len: usize, stride: usize) -> WindowSpec {
    WindowSpec { window_len, stride }
}

pub fn coverage_matches_brute_force() {
    let input = smooth_motion(50, 3, 1);
    let gens: Vec<Array2<f64>> = (0..3).map(|k| smooth_motion(40 + 5 * k, 3, 10 + k as u64)).collect();
    let (ri, rg): (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) = (rows(&input), gens.iter().map(rows).collect());
    for (len, stride) in [(5, 1), (8, 3), (15, 1)] {
        let s = spec(len, stride);
        let starts = window_starts(50, len, stride);
        let best: Vec<f64> = starts
            .iter()
            .map(|&a0| {
                rg.iter()
                    .map(|g| nearest(&ri, a0, g, len, stride))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        for tau in [0.0, 0.5, 1.0, 2.0, 1e9] {
            let want = 100.0 * best.iter().filter(|&&d| d <= tau).count() as f64 / best.len() as f64;
            let got = coverage(&input, &gens, &s, tau).unwrap();
            assert!((got - want).abs() < 1e-12, "len {len} tau {tau}: {got} vs {want}");
        }
    }
}

pub fn default_tau_is_percentile_of_self_distances() {
    let input = random_motion(30, 2, 2);
    let r = rows(&input);
    let s = spec(6, 2);
    let st = window_starts(30, 6, 2);
    let mut d = Vec::new();
    for i in 0..st.len() {
        for j in i + 1..st.len() {
            d.push(dist(&r, st[i], &r, st[j], 6));
        }
    }
    let got = self_distances(&input, &s).unwrap();
    assert_eq!(got.len(), d.len());
    for (a, b) in got.iter().zip(&d) {
        assert!((a - b).abs() < 1e-12);
    }
    d.sort_by(f64::total_cmp);
    let pos = 0.1 * (d.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let want = d[lo] + (pos - lo as f64) * (d[hi] - d[lo]);
    assert!((default_tau(&input, &s).unwrap() - want).abs() < 1e-12);
}

pub fn percentile_hand_values() {
    let v = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
    assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
    assert_eq!(percentile(&v, 50.0).unwrap(), 2.5);
    assert!((percentile(&v, 10.0).unwrap() - 1.3).abs() < 1e-12);
    assert!(percentile(&[], 50.0).is_err());
}

/// Cheapest covering by consecutive segments, with choices checked
/// exhaustively against every input window.
pub fn tessellation_oracle(input: &[Vec<f64>], gen: &[Vec<f64>], len: usize) -> f64 {
    let mut total = 0.0;
    let mut s0 = 0;
    while s0 < gen.len() {
        let l = len.min(gen.len() - s0);
        let best = (0..=input.len() - l)
            .map(|b0| dist(gen, s0, input, b0, l))
            .fold(f64::INFINITY, f64::min);
        // Mean of per-frame distances to the chosen segment, weighted by length.
        total += best * l as f64;
        s0 += l;
    }
    total / gen.len() as f64
}

pub fn global_diversity_matches_exhaustive_tessellation() {
    for (n, m, len, seed) in [(30, 30, 5, 3), (25, 37, 6, 4), (20, 13, 4, 5), (40, 60, 15, 6)] {
        let input = random_motion(n, 2, seed);
        let gen = random_motion(m, 2, seed + 100);
        let got = global_diversity(&input, &gen, &spec(len, 1)).unwrap();
        let want = tessellation_oracle(&rows(&input), &rows(&gen), len);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let tess = tessellate(&input, &gen, &spec(len, 1)).unwrap();
        assert_eq!(tess.dim(), gen.dim());
    }
}

pub fn diversity_values_match_brute_force() {
    let input = random_motion(24, 2, 8);
    let gens: Vec<Array2<f64>> = (0..3).map(|k| random_motion(20, 2, 20 + k)).collect();
    let (len, stride) = (5, 2);
    let s = spec(len, stride);
    let ri = rows(&input);
    let rg: Vec<Vec<Vec<f64>>> = gens.iter().map(rows).collect();
    let mean_nearest = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let st = window_starts(a.len(), len, stride);
        st.iter().map(|&a0| nearest(a, a0, b, len, stride)).sum::<f64>() / st.len() as f64
    };
    let local = mean_nearest(&rg[0], &ri);
    assert!((local_diversity(&input, &gens[0], &s).unwrap() - local).abs() < 1e-12);
    let mut pairs = Vec::new();
    for i in 0..3 {
        for j in i + 1..3 {
            pairs.push(0.5 * (mean_nearest(&rg[i], &rg[j]) + mean_nearest(&rg[j], &rg[i])));
        }
    }
    let got = inter_diversity_pairs(&gens, &s).unwrap();
    for (a, b) in got.iter().zip(&pairs) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((inter_diversity(&gens, &s).unwrap() - pairs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    assert!(inter_diversity(&gens[..1], &s).is_err());

    let intra = |m: &[Vec<f64>]| {
        let st = window_starts(m.len(), len, stride);
        let mut d = Vec::new();
        for i in 0..st.len() {
            for j in i + 1..st.len() {
                d.push(dist(m, st[i], m, st[j], len));
            }
        }
        d.iter().sum::<f64>() / d.len() as f64
    };
    let want = (rg.iter().map(|g| intra(g)).sum::<f64>() / 3.0 - intra(&ri)).abs();
    assert!((intra_diversity_diff(&input, &gens, &s).unwrap() - want).abs() < 1e-12);
}

pub fn harmonic_mean_hand_vectors() {
    assert!((harmonic_mean_of(&[0.5, 0.25, 1.0]).unwrap() - 3.0 / 7.0).abs() < 1e-15);
    assert!((harmonic_mean_of(&[0.5, -0.25, 1.0]).unwrap() + 3.0).abs() < 1e-12);
    assert_eq!(harmonic_mean_of(&[0.5, 0.0, 1.0]).unwrap(), 0.0);
    assert_eq!(harmonic_mean_of(&[0.8]).unwrap(), 0.8);
    assert!(harmonic_mean_of(&[]).is_err());

    let scores = vec![
        Score {
            name: "cov".into(),
            value: 80.0,
            direction: Direction::Higher,
            maximum: Some(100.0),
            population: vec![],
        },
        Score {
            name: "div".into(),
            value: 1.0,
            direction: Direction::Higher,
            maximum: None,
            population: (0..=10).map(|k| k as f64 * 0.2).collect(),
        },
        Score {
            name: "diff".into(),
            value: 0.5,
            direction: Direction::Lower,
            maximum: Some(2.0),
            population: vec![],
        },
    ];
    let (hm, n) = harmonic_mean(&scores).unwrap();
    // Population 0..2 in steps of 0.2: 90th percentile 1.8.
    assert!((n[1].max - 1.8).abs() < 1e-12);
    let s = [0.8, 1.0 / 1.8, 0.75];
    assert!((n[2].score - 0.75).abs() < 1e-15);
    let want = 3.0 / s.iter().map(|v| 1.0 / v).sum::<f64>();
    assert!((hm - want).abs() < 1e-12);
    let over = Score {
        value: 3.0,
        ..scores[2].clone()
    };
    assert!(normalize_score(&over).unwrap().score < 0.0);
    let zero = Score {
        maximum: Some(0.0),
        ..scores[0].clone()
    };
    assert!(normalize_score(&zero).is_err());
}

//! Window-based evaluation of generated motions against the training
//! motion, and harmonic-mean aggregation.
//!
//! Every metric compares temporal windows: `window_len` consecutive frames
//! taken every `stride` frames. The distance between two windows is the mean
//! over frames of the per-frame L2 norm of the feature difference. Inputs are
//! expected in normalized feature space so that distances are unit-free.
//! Sums run in plain index order so results can be reproduced by direct
//! double loops.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_LEN: usize = 15;
pub const DEFAULT_STRIDE: usize = 1;
/// Percentile of input self-distances used as the default coverage threshold.
pub const DEFAULT_TAU_PERCENTILE: f64 = 10.0;
/// Percentile of a score population used as its maximum when none is known.
pub const HM_MAX_PERCENTILE: f64 = 90.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_len: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::Config("window_len and stride must be positive".into()));
        }
        Ok(())
    }

    /// Window start frames of an `n`-frame motion.
    pub fn starts(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if self.window_len > n {
            return Err(Error::invalid(format!(
                "window_len {} exceeds motion length {n}",
                self.window_len
            )));
        }
        Ok((0..=n - self.window_len).step_by(self.stride).collect())
    }
}

/// Mean per-frame L2 distance of the `len`-frame windows at `a0` and `b0`.
pub fn window_distance(a: ArrayView2<f64>, a0: usize, b: ArrayView2<f64>, b0: usize, len: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..len {
        let (ra, rb) = (a.row(a0 + i), b.row(b0 + i));
        let mut sq = 0.0;
        for c in 0..ra.len() {
            let d = ra[c] - rb[c];
            sq += d * d;
        }
        total += sq.sqrt();
    }
    total / len as f64
}

fn check_features(motions: &[&Array2<f64>]) -> Result<()> {
    let f = motions[0].ncols();
    if motions.iter().any(|m| m.ncols() != f) {
        return Err(Error::shape("motions have different feature counts"));
    }
    Ok(())
}

/// Distance from window `a0` of `a` to its nearest window of `b`.
fn nearest(a: &Array2<f64>, a0: usize, b: &Array2<f64>, b_starts: &[usize], len: usize) -> f64 {
    b_starts
        .iter()
        .map(|&b0| window_distance(a.view(), a0, b.view(), b0, len))
        .fold(f64::INFINITY, f64::min)
}

/// Mean over windows of `a` of the distance to their nearest window of `b`.
fn mean_nearest(a: &Array2<f64>, b: &Array2<f64>, spec: &WindowSpec) -> Result<f64> {
    let (sa, sb) = (spec.starts(a.nrows())?, spec.starts(b.nrows())?);
    let d: Vec<f64> = sa
        .par_iter()
        .map(|&a0| nearest(a, a0, b, &sb, spec.window_len))
        .collect();
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// All pairwise distances between distinct windows of `m`, pairs `(i, j)`
/// with `i < j` in row-major order.
pub fn self_distances(m: &Array2<f64>, spec: &WindowSpec) -> Result<Vec<f64>> {
    let s = spec.starts(m.nrows())?;
    let rows: Vec<Vec<f64>> = (0..s.len())
        .into_par_iter()
        .map(|i| {
            (i + 1..s.len())
                .map(|j| window_distance(m.view(), s[i], m.view(), s[j], spec.window_len))
                .collect()
        })
        .collect();
    Ok(rows.concat())
}

/// Linear-interpolation percentile (`p` in [0, 100]) of `values`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Default coverage threshold: a low percentile of the input's own window
/// distances.
pub fn default_tau(input: &Array2<f64>, spec: &WindowSpec) -> Result<f64> {
    percentile(&self_distances(input, spec)?, DEFAULT_TAU_PERCENTILE)
}

/// Percentage of input windows whose nearest generated window (over all
/// generated motions) lies within `tau`.
pub fn coverage(input: &Array2<f64>, generated: &[Array2<f64>], spec: &WindowSpec, tau: f64) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::invalid("coverage needs at least one generated motion"));
    }
    let mut all: Vec<&Array2<f64>> = vec![input];
    all.extend(generated);
    check_features(&all)?;
    let si = spec.starts(input.nrows())?;
    let gs: Vec<Vec<usize>> = generated
        .iter()
        .map(|g| spec.starts(g.nrows()))
        .collect::<Result<_>>()?;
    let hit: Vec<bool> = si
        .par_iter()
        .map(|&a0| {
            let d = generated
                .iter()
                .zip(&gs)
                .map(|(g, s)| nearest(input, a0, g, s, spec.window_len))
                .fold(f64::INFINITY, f64::min);
            d <= tau
        })
        .collect();
    Ok(100.0 * hit.iter().filter(|&&h| h).count() as f64 / hit.len() as f64)
}

/// Greedy tessellation of `generated` by input windows: consecutive
/// `window_len` segments (the last one possibly shorter), each replaced by
/// its nearest input window of the same length.
pub fn tessellate(input: &Array2<f64>, generated: &Array2<f64>, spec: &WindowSpec) -> Result<Array2<f64>> {
    check_features(&[input, generated])?;
    spec.validate()?;
    let (m, l) = (generated.nrows(), spec.window_len);
    let mut out = Array2::zeros(generated.dim());
    let mut s0 = 0;
    while s0 < m {
        let len = l.min(m - s0);
        let starts = WindowSpec {
            window_len: len,
            stride: spec.stride,
        }
        .starts(input.nrows())?;
        let mut best = (f64::INFINITY, 0);
        for &b0 in &starts {
            let d = window_distance(generated.view(), s0, input.view(), b0, len);
            if d < best.0 {
                best = (d, b0);
            }
        }
        for i in 0..len {
            out.row_mut(s0 + i).assign(&input.row(best.1 + i));
        }
        s0 += len;
    }
    Ok(out)
}

/// Mean per-frame L2 distance between `generated` and its tessellation.
pub fn global_diversity(input: &Array2<f64>, generated: &Array2<f64>, spec: &WindowSpec) -> Result<f64> {
    let tess = tessellate(input, generated, spec)?;
    Ok(window_distance(generated.view(), 0, tess.view(), 0, generated.nrows()))
}

/// Mean distance from generated windows to their nearest input window.
pub fn local_diversity(input: &Array2<f64>, generated: &Array2<f64>, spec: &WindowSpec) -> Result<f64> {
    check_features(&[input, generated])?;
    mean_nearest(generated, input, spec)
}

/// Symmetrized mean nearest-window distance of one pair.
pub fn pair_diversity(a: &Array2<f64>, b: &Array2<f64>, spec: &WindowSpec) -> Result<f64> {
    check_features(&[a, b])?;
    Ok(0.5 * (mean_nearest(a, b, spec)? + mean_nearest(b, a, spec)?))
}

/// Per-pair diversities over unordered pairs `(i, j)`, `i < j`.
pub fn inter_diversity_pairs(generated: &[Array2<f64>], spec: &WindowSpec) -> Result<Vec<f64>> {
    if generated.len() < 2 {
        return Err(Error::invalid("inter diversity needs at least two motions"));
    }
    let mut out = Vec::new();
    for i in 0..generated.len() {
        for j in i + 1..generated.len() {
            out.push(pair_diversity(&generated[i], &generated[j], spec)?);
        }
    }
    Ok(out)
}

pub fn inter_diversity(generated: &[Array2<f64>], spec: &WindowSpec) -> Result<f64> {
    let p = inter_diversity_pairs(generated, spec)?;
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

/// Mean pairwise distance between distinct windows of one motion (0 for a
/// single window).
pub fn intra_diversity(m: &Array2<f64>, spec: &WindowSpec) -> Result<f64> {
    let d = self_distances(m, spec)?;
    Ok(if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    })
}

/// `|mean intra(generated) − intra(input)|`.
pub fn intra_diversity_diff(input: &Array2<f64>, generated: &[Array2<f64>], spec: &WindowSpec) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::invalid(
            "intra diversity diff needs at least one generated motion",
        ));
    }
    let base = intra_diversity(input, spec)?;
    let vals: Vec<f64> = generated
        .iter()
        .map(|g| intra_diversity(g, spec))
        .collect::<Result<_>>()?;
    Ok((vals.iter().sum::<f64>() / vals.len() as f64 - base).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Higher,
    Lower,
}

/// One metric entering the harmonic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub name: String,
    pub value: f64,
    pub direction: Direction,
    /// Known upper bound (e.g. 100 for a percentage).
    pub maximum: Option<f64>,
    /// Values of this metric over the evaluated set, used when the maximum
    /// is unknown.
    pub population: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub name: String,
    pub max: f64,
    /// `value/max`, or `(max − value)/max` for lower-better metrics.
    pub score: f64,
}

pub fn normalize_score(s: &Score) -> Result<Normalized> {
    let max = match s.maximum {
        Some(m) => m,
        None if s.population.is_empty() => s.value,
        None => percentile(&s.population, HM_MAX_PERCENTILE)?,
    };
    if !(max.is_finite() && max > 0.0) {
        return Err(Error::invalid(format!(
            "metric '{}' has non-positive maximum {max}",
            s.name
        )));
    }
    let score = match s.direction {
        Direction::Higher => s.value / max,
        Direction::Lower => (max - s.value) / max,
    };
    Ok(Normalized {
        name: s.name.clone(),
        max,
        score,
    })
}

/// `E / Σ 1/sᵢ` over already-normalized scores. Any zero score gives 0
/// (the limit); negative scores are used as they are.
pub fn harmonic_mean_of(normalized: &[f64]) -> Result<f64> {
    if normalized.is_empty() {
        return Err(Error::invalid("harmonic mean of no scores"));
    }
    if normalized.contains(&0.0) {
        return Ok(0.0);
    }
    Ok(normalized.len() as f64 / normalized.iter().map(|s| 1.0 / s).sum::<f64>())
}

/// Normalizes `scores` and aggregates them.
pub fn harmonic_mean(scores: &[Score]) -> Result<(f64, Vec<Normalized>)> {
    let n: Vec<Normalized> = scores.iter().map(normalize_score).collect::<Result<_>>()?;
    let hm = harmonic_mean_of(&n.iter().map(|s| s.score).collect::<Vec<_>>())?;
    Ok((hm, n))
}

/// Everything needed to re-run an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalConfig {
    pub window: WindowSpec,
    /// Coverage threshold; `None` uses [`default_tau`].
    pub tau: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub window: WindowSpec,
    pub tau: f64,
    pub generated_count: usize,
    pub coverage: f64,
    pub global_diversity: f64,
    pub local_diversity: f64,
    /// `None` with fewer than two generated motions.
    pub inter_diversity: Option<f64>,
    pub intra_diversity_diff: f64,
    pub harmonic_mean: f64,
    pub normalization: Vec<Normalized>,
}

/// Full suite. Global and local diversity are averaged over the generated
/// motions; unknown maxima for the harmonic mean come from the per-motion
/// (or per-pair) values of each metric.
pub fn evaluate(input: &Array2<f64>, generated: &[Array2<f64>], config: &EvalConfig) -> Result<MetricsReport> {
    let spec = &config.window;
    if generated.is_empty() {
        return Err(Error::invalid("no generated motions to evaluate"));
    }
    let tau = match config.tau {
        Some(t) => t,
        None => default_tau(input, spec)?,
    };
    let cov = coverage(input, generated, spec, tau)?;
    let globals: Vec<f64> = generated
        .iter()
        .map(|g| global_diversity(input, g, spec))
        .collect::<Result<_>>()?;
    let locals: Vec<f64> = generated
        .iter()
        .map(|g| local_diversity(input, g, spec))
        .collect::<Result<_>>()?;
    let base = intra_diversity(input, spec)?;
    let intras: Vec<f64> = generated
        .iter()
        .map(|g| Ok((intra_diversity(g, spec)? - base).abs()))
        .collect::<Result<_>>()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let inter_pairs = (generated.len() >= 2)
        .then(|| inter_diversity_pairs(generated, spec))
        .transpose()?;
    let intra_diff = intra_diversity_diff(input, generated, spec)?;
    let mut scores = vec![
        Score {
            name: "coverage".into(),
            value: cov,
            direction: Direction::Higher,
            maximum: Some(100.0),
            population: vec![],
        },
        Score {
            name: "global_diversity".into(),
            value: mean(&globals),
            direction: Direction::Higher,
            maximum: None,
            population: globals.clone(),
        },
        Score {
            name: "local_diversity".into(),
            value: mean(&locals),
            direction: Direction::Higher,
            maximum: None,
            population: locals.clone(),
        },
    ];
    if let Some(p) = &inter_pairs {
        scores.push(Score {
            name: "inter_diversity".into(),
            value: mean(p),
            direction: Direction::Higher,
            maximum: None,
            population: p.clone(),
        });
    }
    scores.push(Score {
        name: "intra_diversity_diff".into(),
        value: intra_diff,
        direction: Direction::Lower,
        maximum: None,
        population: intras,
    });
    // A metric that is identically zero has no scale; it normalizes to 0.
    let normalization: Vec<Normalized> = scores
        .iter()
        .map(|s| {
            normalize_score(s).or_else(|_| {
                Ok::<_, Error>(Normalized {
                    name: s.name.clone(),
                    max: 0.0,
                    score: if s.direction == Direction::Lower { 1.0 } else { 0.0 },
                })
            })
        })
        .collect::<Result<_>>()?;
    let hm = harmonic_mean_of(&normalization.iter().map(|n| n.score).collect::<Vec<_>>())?;
    Ok(MetricsReport {
        window: *spec,
        tau,
        generated_count: generated.len(),
        coverage: cov,
        global_diversity: mean(&globals),
        local_diversity: mean(&locals),
        inter_diversity: inter_pairs.as_deref().map(mean),
        intra_diversity_diff: intra_diff,
        harmonic_mean: hm,
        normalization,
    })
}

impl MetricsReport {
    /// Two-row CSV: a header and one line of values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record([
            "window_len",
            "stride",
            "tau",
            "generated_count",
            "coverage",
            "global_diversity",
            "local_diversity",
            "inter_diversity",
            "intra_diversity_diff",
            "harmonic_mean",
        ])
        .map_err(err)?;
        w.write_record(&[
            self.window.window_len.to_string(),
            self.window.stride.to_string(),
            self.tau.to_string(),
            self.generated_count.to_string(),
            self.coverage.to_string(),
            self.global_diversity.to_string(),
            self.local_diversity.to_string(),
            self.inter_diversity.map(|v| v.to_string()).unwrap_or_default(),
            self.intra_diversity_diff.to_string(),
            self.harmonic_mean.to_string(),
        ])
        .map_err(err)?;
        w.flush().map_err(|e| Error::io("metrics csv", e))
    }
}

/// Maps a motion window to a fixed-length embedding. No encoder ships with
/// the library; implement this to get SiFID-style scores.
pub trait FeatureExtractor {
    fn embed(&self, window: ArrayView2<f64>) -> Result<Vec<f64>>;
}

/// Embeddings of every window of `m`.
pub fn embed_windows<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    m: &Array2<f64>,
    spec: &WindowSpec,
) -> Result<Vec<Vec<f64>>> {
    spec.starts(m.nrows())?
        .into_iter()
        .map(|s| extractor.embed(m.slice(ndarray::s![s..s + spec.window_len, ..])))
        .collect()
}

fn gaussian_fit(x: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.len() < 2 {
        return Err(Error::invalid("a Gaussian fit needs at least two embeddings"));
    }
    let d = x[0].len();
    if x.iter().any(|v| v.len() != d) {
        return Err(Error::shape("embeddings have different lengths"));
    }
    let n = x.len() as f64;
    let mut mu = DVector::zeros(d);
    for v in x {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in x {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    Ok((mu, cov / (n - 1.0)))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// Fréchet distance `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})` between
/// Gaussian fits (unbiased covariance) of two embedding sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let ((ma, ca), (mb, cb)) = (gaussian_fit(a)?, gaussian_fit(b)?);
    if ma.len() != mb.len() {
        return Err(Error::shape("embedding sets have different dimensions"));
    }
    let ra = sym_sqrt(&ca);
    let inner = &ra * &cb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    Ok((ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * tr_cross)
}

/// Fréchet distance between window embeddings of the input and of all
/// generated motions pooled together.
pub fn sifid<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    input: &Array2<f64>,
    generated: &[Array2<f64>],
    spec: &WindowSpec,
) -> Result<f64> {
    let a = embed_windows(extractor, input, spec)?;
    let mut b = Vec::new();
    for g in generated {
        b.extend(embed_windows(extractor, g, spec)?);
    }
    frechet_distance(&a, &b)
}

//! Inference-time editing on top of the sampler: composition, harmonization
//! (and style transfer), long generation and crowds. No retraining.
//!
//! All functions work in the model's normalized feature space and take a
//! `seed`; the main chain always draws from the same stream as
//! [`generate`], so degenerate edits reproduce plain sampling bitwise.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{q_sample, sample, NoHook, NoiseSchedule, SampleHook, SamplerConfig, X0Predictor};
use crate::error::{Error, Result};
use crate::motion::FeatureLayout;
use crate::seed::{derive_seed, rng_from, stream};
use crate::tensor::{cst, Scalar, Tensor};

/// Frames synthesized across a composition border.
pub const DEFAULT_RAMP: usize = 15;
pub const DEFAULT_FILTER_FACTOR: usize = 2;

/// Per-frame, per-feature weights: 1 synthesizes, 0 pins to the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiMask {
    pub frames: usize,
    pub features: usize,
    pub ramp_frames: usize,
    weights: Vec<f64>,
}

impl RoiMask {
    pub fn ones(frames: usize, features: usize) -> Self {
        Self {
            frames,
            features,
            ramp_frames: 0,
            weights: vec![1.0; frames * features],
        }
    }

    pub fn from_weights(frames: usize, features: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != frames * features {
            return Err(Error::shape(format!(
                "mask of {} values for {frames}×{features}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("mask weights must lie in [0, 1]"));
        }
        Ok(Self {
            frames,
            features,
            ramp_frames: 0,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, frame: usize, feature: usize) -> f64 {
        self.weights[frame * self.features + feature]
    }
}

/// Composition map over `frames` frames: kept frame ranges and kept feature
/// groups (layout slice names) are pinned. Inside a kept range, the `ramp`
/// frames nearest a synthesized frame rise linearly towards 1, so frame `i`
/// at distance `d` from the nearest synthesized frame has weight
/// `max(0, 1 − d/ramp)`.
pub fn build_mask(
    frames: usize,
    layout: &FeatureLayout,
    temporal_keep: &[Range<usize>],
    spatial_keep: &[&str],
    ramp: usize,
) -> Result<RoiMask> {
    let mut keep = vec![false; frames];
    let mut sorted = temporal_keep.to_vec();
    sorted.sort_by_key(|r| r.start);
    for (k, r) in sorted.iter().enumerate() {
        if r.start >= r.end || r.end > frames {
            return Err(Error::invalid(format!(
                "keep range {}..{} is empty or outside 0..{frames}",
                r.start, r.end
            )));
        }
        if k > 0 && sorted[k - 1].end > r.start {
            return Err(Error::invalid(format!(
                "keep ranges {}..{} and {}..{} overlap",
                sorted[k - 1].start,
                sorted[k - 1].end,
                r.start,
                r.end
            )));
        }
        keep[r.clone()].iter_mut().for_each(|k| *k = true);
    }
    // Distance from each frame to the nearest synthesized frame.
    let mut dist = vec![usize::MAX; frames];
    let mut last = None;
    for i in 0..frames {
        if !keep[i] {
            last = Some(i);
        }
        if let Some(j) = last {
            dist[i] = i - j;
        }
    }
    last = None;
    for i in (0..frames).rev() {
        if !keep[i] {
            last = Some(i);
        }
        if let Some(j) = last {
            dist[i] = dist[i].min(j - i);
        }
    }
    let temporal: Vec<f64> = dist
        .iter()
        .map(|&d| match d {
            0 => 1.0,
            d if ramp == 0 || d >= ramp => 0.0,
            d => 1.0 - d as f64 / ramp as f64,
        })
        .collect();
    let f = layout.features;
    let mut spatial = vec![1.0; f];
    for name in spatial_keep {
        for r in layout.resolve(name)? {
            spatial[r].iter_mut().for_each(|s| *s = 0.0);
        }
    }
    let mut weights = Vec::with_capacity(frames * f);
    for &t in &temporal {
        weights.extend(spatial.iter().map(|&s| t.min(s)));
    }
    Ok(RoiMask {
        frames,
        features: f,
        ramp_frames: ramp,
        weights,
    })
}

/// Plain unconditional sample of `frames × features` from `seed`.
pub fn generate<T, P>(
    predictor: &mut P,
    schedule: &NoiseSchedule,
    frames: usize,
    features: usize,
    seed: u64,
    config: SamplerConfig,
) -> Result<Tensor<T>>
where
    T: Scalar,
    P: X0Predictor<T> + ?Sized,
{
    let mut rng = rng_from(seed, stream::SAMPLE);
    sample(predictor, schedule, frames, features, &mut rng, &mut NoHook, config)
}

struct Blend<'a, T: Scalar> {
    y: &'a Tensor<T>,
    mask: &'a RoiMask,
}

impl<T: Scalar> SampleHook<T> for Blend<'_, T> {
    fn on_x0(&mut self, _t: usize, x0: &mut Tensor<T>) -> Result<()> {
        for ((x, &y), &m) in x0.data_mut().iter_mut().zip(self.y.data()).zip(self.mask.weights()) {
            if m != 1.0 {
                let m: T = cst(m);
                *x = m * *x + (T::one() - m) * y;
            }
        }
        Ok(())
    }
}

/// Synthesizes where `mask` is 1 and pins to `y` where it is 0, blending
/// `x̂0 ← m⊙x̂0 + (1−m)⊙y` at every step.
pub fn compose<T, P>(
    predictor: &mut P,
    schedule: &NoiseSchedule,
    y: &Tensor<T>,
    mask: &RoiMask,
    seed: u64,
    config: SamplerConfig,
) -> Result<Tensor<T>>
where
    T: Scalar,
    P: X0Predictor<T> + ?Sized,
{
    let s = y.shape();
    if s.len() != 2 || s[0] != mask.frames || s[1] != mask.features {
        return Err(Error::shape(format!(
            "reference {s:?} does not match a {}×{} mask",
            mask.frames, mask.features
        )));
    }
    let mut rng = rng_from(seed, stream::SAMPLE);
    let mut hook = Blend { y, mask };
    sample(predictor, schedule, s[0], s[1], &mut rng, &mut hook, config)
}

/// The linear low-pass filter `φ` of harmonization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LowPass {
    /// Block-average by `factor` frames, then linearly interpolate back.
    Resample(usize),
    /// Maps everything to zero; harmonization then leaves sampling untouched.
    Zero,
}

impl LowPass {
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, f) = (x.shape()[0], x.shape()[1]);
        match *self {
            LowPass::Zero => Ok(Tensor::zeros(x.shape())),
            LowPass::Resample(0) => Err(Error::invalid("filter factor must be at least 1")),
            LowPass::Resample(1) => Ok(x.clone()),
            LowPass::Resample(k) => {
                let m = n.div_ceil(k);
                let mut low = vec![0.0f64; m * f];
                let mut centers = vec![0.0f64; m];
                for j in 0..m {
                    let (a, b) = (j * k, ((j + 1) * k).min(n));
                    centers[j] = (a + b - 1) as f64 / 2.0;
                    for i in a..b {
                        for c in 0..f {
                            low[j * f + c] += x.data()[i * f + c].as_f64();
                        }
                    }
                    for c in 0..f {
                        low[j * f + c] /= (b - a) as f64;
                    }
                }
                let mut out = Vec::with_capacity(n * f);
                let mut j = 0;
                for i in 0..n {
                    let p = i as f64;
                    while j + 1 < m && centers[j + 1] <= p {
                        j += 1;
                    }
                    let (j0, j1, w) = if p <= centers[0] {
                        (0, 0, 0.0)
                    } else if j + 1 >= m {
                        (m - 1, m - 1, 0.0)
                    } else {
                        (j, j + 1, (p - centers[j]) / (centers[j + 1] - centers[j]))
                    };
                    for c in 0..f {
                        out.push(cst((1.0 - w) * low[j0 * f + c] + w * low[j1 * f + c]));
                    }
                }
                Tensor::new(x.shape(), out)
            }
        }
    }
}

/// Which part of the reference is injected, and how strongly it is filtered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonizationSpec {
    pub filter: LowPass,
    /// Reference frames injected at the same positions; `None` takes all of
    /// them (style transfer).
    pub frames: Option<Range<usize>>,
}

struct Harmonize<'a, T: Scalar> {
    y0: &'a Tensor<T>,
    schedule: &'a NoiseSchedule,
    filter: LowPass,
    rng: rand_chacha::ChaCha8Rng,
}

impl<T: Scalar> SampleHook<T> for Harmonize<'_, T> {
    /// `x_{t−1} ← φ(y_{t−1}) + x′_{t−1} − φ(x′_{t−1})` with a fresh noising
    /// `y_{t−1}` of `y0`.
    fn on_step(&mut self, t: usize, x: &mut Tensor<T>) -> Result<()> {
        if self.filter == LowPass::Zero {
            return Ok(());
        }
        let eps = Tensor::<T>::randn(self.y0.shape(), &mut self.rng);
        let y = q_sample(self.y0, t - 1, &eps, self.schedule)?;
        let (fy, fx) = (self.filter.apply(&y)?, self.filter.apply(x)?);
        for ((v, &a), &b) in x.data_mut().iter_mut().zip(fy.data()).zip(fx.data()) {
            *v = a + *v - b;
        }
        Ok(())
    }
}

/// Keeps the low frequencies of `reference` (within `spec.frames`) while
/// the model re-synthesizes the rest. Outside the window the target is
/// `x_init`, or a fresh sample when none is given.
pub fn harmonize<T, P>(
    predictor: &mut P,
    schedule: &NoiseSchedule,
    x_init: Option<&Tensor<T>>,
    reference: &Tensor<T>,
    spec: &HarmonizationSpec,
    seed: u64,
    config: SamplerConfig,
) -> Result<Tensor<T>>
where
    T: Scalar,
    P: X0Predictor<T> + ?Sized,
{
    let (ny, f) = (reference.shape()[0], reference.shape()[1]);
    let window = spec.frames.clone().unwrap_or(0..ny);
    if window.start >= window.end || window.end > ny {
        return Err(Error::invalid(format!(
            "window {}..{} outside the {ny}-frame reference",
            window.start, window.end
        )));
    }
    if let LowPass::Resample(0) = spec.filter {
        return Err(Error::invalid("filter factor must be at least 1"));
    }
    let full = window == (0..ny);
    let base = match x_init {
        Some(x) => {
            if x.shape()[1] != f || x.shape()[0] < window.end {
                return Err(Error::shape(format!(
                    "initial motion {:?} cannot hold window {}..{} of {f} features",
                    x.shape(),
                    window.start,
                    window.end
                )));
            }
            x.clone()
        }
        None if full => reference.clone(),
        None => {
            let mut rng = rng_from(seed, stream::INIT_SAMPLE);
            sample(predictor, schedule, ny, f, &mut rng, &mut NoHook, config)?
        }
    };
    let mut y0 = base;
    y0.data_mut()[window.start * f..window.end * f]
        .copy_from_slice(&reference.data()[window.start * f..window.end * f]);
    let n = y0.shape()[0];
    let mut rng = rng_from(seed, stream::SAMPLE);
    let mut hook = Harmonize {
        y0: &y0,
        schedule,
        filter: spec.filter,
        rng: rng_from(seed, stream::HARMONIZE),
    };
    sample(predictor, schedule, n, f, &mut rng, &mut hook, config)
}

/// One sampling pass at an arbitrary length; no stitching.
pub fn generate_long<T, P>(
    predictor: &mut P,
    schedule: &NoiseSchedule,
    frames: usize,
    features: usize,
    seed: u64,
    config: SamplerConfig,
) -> Result<Tensor<T>>
where
    T: Scalar,
    P: X0Predictor<T> + ?Sized,
{
    generate(predictor, schedule, frames, features, seed, config)
}

/// Seed of crowd member `index`.
pub fn crowd_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(base_seed, stream::CROWD + index as u64)
}

/// `count` independent samples; member `i` equals [`generate`] with
/// [`crowd_seed`]`(base_seed, i)`. Members run in parallel, each with its own
/// predictor from `make`.
pub fn generate_crowd<T, P, M>(
    make: M,
    schedule: &NoiseSchedule,
    count: usize,
    frames: usize,
    features: usize,
    base_seed: u64,
    config: SamplerConfig,
) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    P: X0Predictor<T>,
    M: Fn() -> P + Sync,
{
    if count == 0 {
        return Err(Error::invalid("crowd size must be at least 1"));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            generate(
                &mut make(),
                schedule,
                frames,
                features,
                crowd_seed(base_seed, i),
                config,
            )
        })
        .collect()
}

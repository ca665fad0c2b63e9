//! DDPM forward process, x0-prediction training loss and ancestral sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{cst, Scalar, Tensor};

pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

/// Named noise schedules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!(
                "unknown noise_schedule '{other}' (supported: cosine)"
            ))),
        }
    }
}

/// Per-step noise levels. Index `t` runs over `0..=T`; `alpha_bar[0] = 1`
/// and `beta[0]` is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `ᾱ_t = f(t)/f(0)` with `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`; each
    /// `β_t = 1 − ᾱ_t/ᾱ_{t−1}` is clipped to [`MAX_BETA`] and `ᾱ` is
    /// re-accumulated from the clipped values.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("diffusion needs at least 2 steps, got {steps}")));
        }
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut beta = vec![0.0; steps + 1];
        let mut alpha = vec![1.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        for t in 1..=steps {
            let b = (1.0 - (f(t) / f0) / (f(t - 1) / f0)).min(MAX_BETA);
            beta[t] = b;
            alpha[t] = 1.0 - b;
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0·x̂0 + ct·x_t`.
    pub fn posterior_mean_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let c0 = ab_prev.sqrt() * self.beta[t] / (1.0 - ab);
        let ct = self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }

    pub fn posterior_variance(&self, t: usize, kind: PosteriorVariance) -> f64 {
        match kind {
            PosteriorVariance::Posterior => self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]),
            PosteriorVariance::Beta => self.beta[t],
        }
    }
}

/// Variance of `q(x_{t−1} | x_t, x̂0)` used when sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorVariance {
    /// `β̃_t = β_t(1 − ᾱ_{t−1})/(1 − ᾱ_t)`.
    #[default]
    Posterior,
    Beta,
}

/// `√ᾱ_t·x0 + √(1 − ᾱ_t)·ε`.
pub fn q_sample<T: Scalar>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>> {
    schedule.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::shape(format!("x0 {:?} vs noise {:?}", x0.shape(), eps.shape())));
    }
    let a: T = cst(schedule.alpha_bar(t).sqrt());
    let s: T = cst((1.0 - schedule.alpha_bar(t)).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + s * e).collect();
    Tensor::new(x0.shape(), data)
}

/// Records the x0-prediction loss for one batch of independent noisings of
/// the single sequence `x0` (`N×F`). `model` maps a `B×N×F` variable and
/// per-element steps to a `B×N×F` prediction.
pub fn training_loss<T, R, M>(
    tape: &mut Tape<T>,
    x0: &Tensor<T>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    batch: usize,
    mut model: M,
) -> Result<Var>
where
    T: Scalar,
    R: Rng + ?Sized,
    M: FnMut(&mut Tape<T>, Var, &[usize], &mut R) -> Result<Var>,
{
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if x0.shape().len() != 2 {
        return Err(Error::shape(format!("x0 must be N×F, got {:?}", x0.shape())));
    }
    let (n, f) = (x0.shape()[0], x0.shape()[1]);
    let mut steps = Vec::with_capacity(batch);
    let mut noisy = Vec::with_capacity(batch * n * f);
    let mut target = Vec::with_capacity(batch * n * f);
    for _ in 0..batch {
        let t = rng.random_range(1..=schedule.steps());
        let eps = Tensor::randn(x0.shape(), rng);
        noisy.extend_from_slice(q_sample(x0, t, &eps, schedule)?.data());
        target.extend_from_slice(x0.data());
        steps.push(t);
    }
    let x_t = tape.constant(Tensor::new(&[batch, n, f], noisy)?);
    let target = tape.constant(Tensor::new(&[batch, n, f], target)?);
    let pred = model(tape, x_t, &steps, rng)?;
    tape.mse(pred, target)
}

/// Inference-time x0 predictor over a single `N×F` sample.
pub trait X0Predictor<T: Scalar> {
    fn predict_x0(&mut self, x_t: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

impl<T: Scalar, F> X0Predictor<T> for F
where
    F: FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
{
    fn predict_x0(&mut self, x_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        self(x_t, t)
    }
}

/// Per-step transforms applied by [`p_sample_step`].
pub trait SampleHook<T: Scalar> {
    /// May replace the prediction `x̂0` made at step `t`.
    fn on_x0(&mut self, _t: usize, _x0: &mut Tensor<T>) -> Result<()> {
        Ok(())
    }

    /// May replace `x_{t−1}` after the posterior draw at step `t`.
    fn on_step(&mut self, _t: usize, _x_prev: &mut Tensor<T>) -> Result<()> {
        Ok(())
    }
}

/// Leaves every step untouched.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoHook;

impl<T: Scalar> SampleHook<T> for NoHook {}

/// Sampler settings shared by all applications.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplerConfig {
    pub variance: PosteriorVariance,
}

/// One ancestral step `x_t → x_{t−1}`. No noise is drawn at `t = 1`.
pub fn p_sample_step<T, P, R, H>(
    x_t: &Tensor<T>,
    t: usize,
    predictor: &mut P,
    schedule: &NoiseSchedule,
    rng: &mut R,
    hook: &mut H,
    config: SamplerConfig,
) -> Result<Tensor<T>>
where
    T: Scalar,
    P: X0Predictor<T> + ?Sized,
    R: Rng + ?Sized,
    H: SampleHook<T> + ?Sized,
{
    if t == 0 {
        return Err(Error::invalid("cannot sample from step 0"));
    }
    schedule.check_step(t)?;
    let mut x0 = predictor.predict_x0(x_t, t)?;
    if x0.shape() != x_t.shape() {
        return Err(Error::shape(format!(
            "denoiser returned {:?} for input {:?}",
            x0.shape(),
            x_t.shape()
        )));
    }
    hook.on_x0(t, &mut x0)?;
    let (c0, ct) = schedule.posterior_mean_coefficients(t);
    let (c0, ct): (T, T) = (cst(c0), cst(ct));
    let mut data: Vec<T> = x0
        .data()
        .iter()
        .zip(x_t.data())
        .map(|(&a, &b)| c0 * a + ct * b)
        .collect();
    if t > 1 {
        let sigma: T = cst(schedule.posterior_variance(t, config.variance).sqrt());
        let noise = Tensor::<T>::randn(x_t.shape(), rng);
        for (d, &z) in data.iter_mut().zip(noise.data()) {
            *d += sigma * z;
        }
    }
    let mut x_prev = Tensor::new(x_t.shape(), data)?;
    hook.on_step(t, &mut x_prev)?;
    Ok(x_prev)
}

/// Full reverse chain from `x_T ∼ N(0, I)` of shape `N×F`.
#[allow(clippy::too_many_arguments)]
pub fn sample<T, P, R, H>(
    predictor: &mut P,
    schedule: &NoiseSchedule,
    frames: usize,
    features: usize,
    rng: &mut R,
    hook: &mut H,
    config: SamplerConfig,
) -> Result<Tensor<T>>
where
    T: Scalar,
    P: X0Predictor<T> + ?Sized,
    R: Rng + ?Sized,
    H: SampleHook<T> + ?Sized,
{
    let mut x = Tensor::<T>::randn(&[frames, features], rng);
    for t in (1..=schedule.steps()).rev() {
        x = p_sample_step(&x, t, predictor, schedule, rng, hook, config)?;
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("sampled motion".into()));
    }
    Ok(x)
}

mod common;

use common::{random_model, rng, tiny_config};
use proptest::prelude::*;
use sinmotion::autodiff::Tape;
use sinmotion::diffusion::*;
use sinmotion::tensor::Tensor;
use sinmotion::Result;

/// Closed-form cumulative noise level before clipping.
fn cosine_alpha_bar(t: usize, steps: usize) -> f64 {
    let f = |t: f64| {
        ((t / steps as f64 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2)
    };
    f(t as f64) / f(0.0)
}

#[test]
fn schedule_is_monotone_and_ends_near_zero() {
    let s = NoiseSchedule::cosine(1000).unwrap();
    assert_eq!(s.steps(), 1000);
    assert_eq!(s.alpha_bar(0), 1.0);
    for t in 1..=1000 {
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "t = {t}");
        assert!(s.beta(t) > 0.0 && s.beta(t) <= MAX_BETA);
    }
    assert!(s.alpha_bar(1000) < 1e-3);
    // Clipping only bites on the last few steps; elsewhere the closed form holds.
    for t in 0..=990 {
        assert!((s.alpha_bar(t) - cosine_alpha_bar(t, 1000)).abs() < 1e-12, "t = {t}");
    }
    assert!(NoiseSchedule::cosine(1).is_err());
}

#[test]
fn posterior_coefficients_match_closed_form() {
    for steps in [2, 10, 100, 1000] {
        let s = NoiseSchedule::cosine(steps).unwrap();
        for t in 1..=steps {
            let ab = s.alpha_bar(t);
            let ab_prev = s.alpha_bar(t - 1);
            let beta = 1.0 - ab / ab_prev;
            let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let (a, b) = s.posterior_mean_coefficients(t);
            assert!((a - c0).abs() < 1e-9 && (b - ct).abs() < 1e-9, "T {steps} t {t}");
            // A noise-free x_t = √ᾱ_t·x0 with x̂0 = x0 maps to √ᾱ_{t−1}·x0.
            assert!((a + b * ab.sqrt() - ab_prev.sqrt()).abs() < 1e-9);
            let var = s.posterior_variance(t, PosteriorVariance::Posterior);
            assert!((var - beta * (1.0 - ab_prev) / (1.0 - ab)).abs() < 1e-12);
            assert_eq!(s.posterior_variance(t, PosteriorVariance::Beta), s.beta(t));
        }
    }
}

#[test]
fn q_sample_endpoints() {
    let s = NoiseSchedule::cosine(50).unwrap();
    let x0 = Tensor::<f64>::randn(&[4, 3], &mut rng(1));
    let eps = Tensor::<f64>::randn(&[4, 3], &mut rng(2));
    assert_eq!(q_sample(&x0, 0, &eps, &s).unwrap(), x0);
    let last = q_sample(&x0, 50, &eps, &s).unwrap();
    for (a, b) in last.data().iter().zip(eps.data()) {
        assert!((a - b).abs() < 0.05);
    }
    assert!(q_sample(&x0, 51, &eps, &s).is_err());
}

#[test]
fn q_sample_moments_monte_carlo() {
    let s = NoiseSchedule::cosine(1000).unwrap();
    let draws = 100_000;
    let x0 = Tensor::<f64>::full(&[draws, 1], 2.0);
    for t in [100, 400, 700] {
        let eps = Tensor::<f64>::randn(&[draws, 1], &mut rng(t as u64));
        let x = q_sample(&x0, t, &eps, &s).unwrap();
        let mean = x.data().iter().sum::<f64>() / draws as f64;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws as f64;
        let (m, v) = (2.0 * s.alpha_bar(t).sqrt(), 1.0 - s.alpha_bar(t));
        assert!((mean / m - 1.0).abs() < 0.02, "t {t}: mean {mean} vs {m}");
        assert!((var / v - 1.0).abs() < 0.02, "t {t}: var {var} vs {v}");
    }
}

proptest! {
    #[test]
    fn schedule_invariants_hold_for_any_length(steps in 2usize..3000) {
        let s = NoiseSchedule::cosine(steps).unwrap();
        for t in 1..=steps {
            prop_assert!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0);
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn q_sample_is_linear(seed in 0u64..1000, t in 0usize..=200, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let s = NoiseSchedule::cosine(200).unwrap();
        let mut r = rng(seed);
        let shape = [5, 2];
        let (x1, e1) = (Tensor::<f64>::randn(&shape, &mut r), Tensor::<f64>::randn(&shape, &mut r));
        let (x2, e2) = (Tensor::<f64>::randn(&shape, &mut r), Tensor::<f64>::randn(&shape, &mut r));
        let mix = |p: &Tensor<f64>, q: &Tensor<f64>| {
            Tensor::new(&shape, p.data().iter().zip(q.data()).map(|(u, v)| a * u + b * v).collect()).unwrap()
        };
        let lhs = q_sample(&mix(&x1, &x2), t, &mix(&e1, &e2), &s).unwrap();
        let rhs = mix(&q_sample(&x1, t, &e1, &s).unwrap(), &q_sample(&x2, t, &e2, &s).unwrap());
        for (u, v) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}

fn loss_with<M>(x0: &Tensor<f64>, seed: u64, model: M) -> f64
where
    M: FnMut(
        &mut Tape<f64>,
        sinmotion::autodiff::Var,
        &[usize],
        &mut rand_chacha::ChaCha8Rng,
    ) -> Result<sinmotion::autodiff::Var>,
{
    let s = NoiseSchedule::cosine(100).unwrap();
    let mut tape = Tape::new();
    let loss = training_loss(&mut tape, x0, &s, &mut rng(seed), 6, model).unwrap();
    tape.scalar(loss)
}

#[test]
fn training_loss_of_oracle_and_zero_models() {
    let x0 = Tensor::<f64>::randn(&[12, 3], &mut rng(3));
    let batch_x0 = |tape: &mut Tape<f64>, x: sinmotion::autodiff::Var| {
        let b = tape.shape(x)[0];
        tape.constant(Tensor::new(&[b, 12, 3], x0.data().repeat(b)).unwrap())
    };
    let perfect = loss_with(&x0, 4, |tape, x, _, _| Ok(batch_x0(tape, x)));
    assert_eq!(perfect, 0.0);
    let zero = loss_with(&x0, 4, |tape, x, _, _| Ok(tape.scale(x, 0.0)));
    let direct = x0.data().iter().map(|v| v * v).sum::<f64>() / x0.numel() as f64;
    assert!((zero - direct).abs() < 1e-12, "{zero} vs {direct}");
}

#[test]
fn training_loss_draws_valid_steps_and_is_reproducible() {
    let x0 = Tensor::<f64>::randn(&[16, 2], &mut rng(5));
    let model = random_model(tiny_config(2, 2), 6);
    let run = |seed| {
        loss_with(&x0, seed, |tape, x, t, r| {
            assert!(t.iter().all(|&s| (1..=100).contains(&s)));
            let bound = model.bind(tape, true);
            model.forward(tape, &bound, x, t, true, r)
        })
    };
    assert_eq!(run(7).to_bits(), run(7).to_bits());
    assert_ne!(run(7), run(8));
    let s = NoiseSchedule::cosine(10).unwrap();
    let mut tape = Tape::new();
    let bad = training_loss(&mut tape, &x0, &s, &mut rng(0), 0, |_, x, _, _| Ok(x));
    assert!(bad.is_err());
}

#[test]
fn final_step_adds_no_noise() {
    let s = NoiseSchedule::cosine(20).unwrap();
    let x = Tensor::<f64>::randn(&[6, 2], &mut rng(9));
    let mut half = |x: &Tensor<f64>, _t: usize| Ok(x.map(|v| 0.5 * v));
    let cfg = SamplerConfig::default();
    let a = p_sample_step(&x, 1, &mut half, &s, &mut rng(1), &mut NoHook, cfg).unwrap();
    let b = p_sample_step(&x, 1, &mut half, &s, &mut rng(2), &mut NoHook, cfg).unwrap();
    assert_eq!(a, b);
    let c = p_sample_step(&x, 2, &mut half, &s, &mut rng(1), &mut NoHook, cfg).unwrap();
    let d = p_sample_step(&x, 2, &mut half, &s, &mut rng(2), &mut NoHook, cfg).unwrap();
    assert_ne!(c, d);
    assert!(p_sample_step(&x, 0, &mut half, &s, &mut rng(1), &mut NoHook, cfg).is_err());
}

struct Pin(Tensor<f64>);

impl SampleHook<f64> for Pin {
    fn on_x0(&mut self, _t: usize, x0: &mut Tensor<f64>) -> Result<()> {
        *x0 = self.0.clone();
        Ok(())
    }
}

#[test]
fn pinned_prediction_reproduces_target() {
    let s = NoiseSchedule::cosine(100).unwrap();
    let y = Tensor::<f64>::randn(&[20, 3], &mut rng(10));
    let mut noise = |x: &Tensor<f64>, _t: usize| Ok(x.clone());
    let out = sample(
        &mut noise,
        &s,
        20,
        3,
        &mut rng(11),
        &mut Pin(y.clone()),
        SamplerConfig::default(),
    )
    .unwrap();
    let max = out
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max < 1e-2, "{max}");
}

#[test]
fn sampling_counts_and_determinism() {
    let s = NoiseSchedule::cosine(30).unwrap();
    let model = random_model(tiny_config(3, 2), 12);
    let cfg = SamplerConfig::default();
    let mut p = model.predictor();
    let a = sample(&mut p, &s, 16, 3, &mut rng(13), &mut NoHook, cfg).unwrap();
    assert_eq!(p.evaluations(), 30);
    let b = sample(&mut model.predictor(), &s, 16, 3, &mut rng(13), &mut NoHook, cfg).unwrap();
    let c = sample(&mut model.predictor(), &s, 16, 3, &mut rng(14), &mut NoHook, cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);

    let mut calls = 0;
    let mut counting = |x: &Tensor<f64>, _t: usize| {
        calls += 1;
        Ok(x.clone())
    };
    sample(&mut counting, &s, 4, 1, &mut rng(0), &mut NoHook, cfg).unwrap();
    assert_eq!(calls, 30);
}

#[test]
fn sampling_accepts_longer_sequences() {
    let s = NoiseSchedule::cosine(25).unwrap();
    let model = random_model(tiny_config(4, 2), 15);
    let out = sample(
        &mut model.predictor(),
        &s,
        4 * 16,
        4,
        &mut rng(16),
        &mut NoHook,
        SamplerConfig::default(),
    )
    .unwrap();
    assert_eq!(out.shape(), &[64, 4]);
    assert!(out.all_finite());
}

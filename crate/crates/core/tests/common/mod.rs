#![allow(dead_code)]

pub mod grad_suite;
pub mod metric_oracles;
pub mod rf_probe;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sinmotion::autodiff::{Tape, Var};
use sinmotion::denoiser::{Denoiser, DenoiserConfig};
use sinmotion::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small architecture for tests that run the network in f64.
pub fn tiny_config(features: usize, depth: usize) -> DenoiserConfig {
    DenoiserConfig {
        features,
        num_channels: 8,
        channel_mult: 1,
        num_res_blocks: 1,
        kernel_size: 3,
        depth,
        qna_window: 5,
        num_heads: 2,
        head_dim: 4,
        dropout: 0.0,
        use_scale_shift_norm: true,
        padding_mode: Default::default(),
        norm_groups: 2,
    }
}

/// Relative error used by every finite-difference check. `scale` is the
/// largest gradient magnitude of the check; coordinates far below it are
/// compared against `1e-3·scale`, above the central-difference roundoff floor.
pub fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3 * scale).max(1e-12)
}

/// Central differences of `f` at `x[i]` with step `h`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Records a weighted sum of `out` with fixed pseudo-random weights, a
/// generic scalar loss whose gradient is nonzero almost everywhere.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let mut r = rng(seed);
    let w = tape.constant(Tensor::<f64>::uniform(&shape, 1.0, &mut r));
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

pub fn random_model(cfg: DenoiserConfig, seed: u64) -> Denoiser<f64> {
    Denoiser::with_random_output(cfg, &mut rng(seed)).unwrap()
}

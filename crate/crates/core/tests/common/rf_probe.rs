//! Receptive field measured by backpropagating from single output frames.

use sinmotion::autodiff::Tape;
use sinmotion::denoiser::{input_span, receptive_field, Denoiser, DenoiserConfig};
use sinmotion::tensor::Tensor;

use super::{random_model, rng, weighted_sum};

/// Nonzero span of `∂ out[frame] / ∂ x` measured by backpropagation.
pub fn measured_span(m: &Denoiser<f64>, n: usize, frame: usize) -> (usize, usize) {
    let f = m.config().features;
    let mut tape = Tape::<f64>::new();
    let bound = m.bind(&mut tape, false);
    let x = tape.leaf(&Tensor::randn(&[1, n, f], &mut rng(21)).with_requires_grad(true));
    let out = m.forward(&mut tape, &bound, x, &[17], false, &mut rng(0)).unwrap();
    let row = tape.slice(out, 1, frame, 1).unwrap();
    let loss = weighted_sum(&mut tape, row, 22);
    tape.backward(loss).unwrap();
    let g = tape.grad(x).unwrap();
    let hit: Vec<usize> = (0..n)
        .filter(|&j| g[j * f..(j + 1) * f].iter().any(|&v| v != 0.0))
        .collect();
    (hit[0], *hit.last().unwrap())
}

/// Probes a few interior frames of a random model built from `cfg`, checks
/// every span against [`input_span`] and returns the widest measured span.
pub fn probe_receptive_field(cfg: &DenoiserConfig, seed: u64) -> usize {
    let rf = receptive_field(cfg);
    let m = random_model(cfg.clone(), seed);
    let factor = 1 << (cfg.depth - 1);
    let n = (2 * rf + 16).next_multiple_of(factor.max(4));
    let mut widest = 0;
    for frame in [n / 2, n / 2 + 1, n / 2 + 2, n / 2 + 3] {
        let (lo, hi) = measured_span(&m, n, frame);
        let (alo, ahi) = input_span(cfg, frame as i64);
        assert_eq!((lo as i64, hi as i64), (alo, ahi), "depth {} frame {frame}", cfg.depth);
        widest = widest.max(hi - lo + 1);
    }
    widest
}

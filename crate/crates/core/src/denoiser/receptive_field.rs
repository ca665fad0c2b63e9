//! Analytic temporal receptive field of the denoiser.
//!
//! Dependencies are traced backwards from one output frame through the
//! network graph on an unbounded sequence: a convolution widens an interval
//! by `(k−1)/2` per side, a QnA layer by `(w−1)/2`, pooling maps `[lo, hi]`
//! to `[2lo, 2hi+1]`, upsampling to the two interpolation taps of each end,
//! and the skip concatenations take the hull of both branches.

use crate::denoiser::config::DenoiserConfig;

type Span = (i64, i64);

fn widen((lo, hi): Span, r: i64) -> Span {
    (lo - r, hi + r)
}

fn hull(a: Span, b: Span) -> Span {
    (a.0.min(b.0), a.1.max(b.1))
}

fn unpool((lo, hi): Span) -> Span {
    (2 * lo, 2 * hi + 1)
}

/// Low-resolution frames feeding upsampled frames `[lo, hi]`.
fn unupsample((lo, hi): Span) -> Span {
    let low = |i: i64| if i % 2 == 0 { i / 2 - 1 } else { (i - 1) / 2 };
    let high = |i: i64| if i % 2 == 0 { i / 2 } else { (i + 1) / 2 };
    (low(lo), high(hi))
}

/// Input frames that can influence output frame `frame`, ignoring sequence
/// ends.
pub fn input_span(cfg: &DenoiserConfig, frame: i64) -> Span {
    let rc = (cfg.kernel_size as i64 - 1) / 2;
    let rq = (cfg.qna_window as i64 - 1) / 2;
    let block = cfg.num_res_blocks as i64 * (2 * rc + rq);
    let d = cfg.depth;
    let mut skip = vec![(0, 0); d];
    // Up path, from the output towards the middle block.
    let mut s = widen((frame, frame), rc);
    for (l, sk) in skip.iter_mut().enumerate() {
        s = widen(s, block);
        *sk = s;
        if l + 1 < d {
            s = unupsample(s);
        }
    }
    // Middle block, then the down path back to the input.
    let mut a = hull(skip[d - 1], widen(s, 2 * rc + rq));
    for l in (0..d).rev() {
        let entry = widen(a, block);
        if l == 0 {
            return widen(entry, rc);
        }
        a = hull(skip[l - 1], unpool(entry));
    }
    unreachable!("depth is at least 1")
}

/// Widest span over one period of the pooling phase.
pub fn receptive_field(cfg: &DenoiserConfig) -> usize {
    let period = 1i64 << cfg.depth.saturating_sub(1);
    let origin = 1i64 << 20;
    (0..period)
        .map(|p| {
            let (lo, hi) = input_span(cfg, origin + p);
            (hi - lo + 1) as usize
        })
        .max()
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_one_accumulates_additively() {
        let cfg = DenoiserConfig::standard(10);
        // input conv, three residual blocks of two convs, three QnA layers,
        // output conv
        let r = 1 + 3 * (2 + 15) + 1;
        assert_eq!(receptive_field(&cfg), 2 * r + 1);
    }

    #[test]
    fn deeper_is_wider() {
        let mut cfg = DenoiserConfig::standard(10);
        let one = receptive_field(&cfg);
        cfg.depth = 3;
        assert!(receptive_field(&cfg) > one);
    }
}

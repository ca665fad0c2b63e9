//! Pure forward/backward kernels on flat slices.
//!
//! Every reduction runs in a fixed order, so results are bitwise
//! reproducible regardless of how rayon schedules the outer loops.

use rayon::prelude::*;

use crate::tensor::{cst, Scalar};

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

/// Dot product with eight independent accumulators (lets the compiler
/// vectorize) combined in a fixed order.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn sum<T: Scalar>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += x[c * 8 + l];
        }
    }
    let mut tail = T::zero();
    for &v in &x[chunks * 8..] {
        tail += v;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
}

impl ConvDims {
    /// Output index range `[lo, hi)` for which tap `k` reads inside the input.
    #[inline]
    fn valid(&self, k: usize) -> (isize, usize, usize) {
        let r = (self.kernel / 2) as isize;
        let s = k as isize - r;
        let lo = (-s).max(0) as usize;
        let hi = (self.len as isize - s).min(self.len as isize).max(0) as usize;
        (s, lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: ConvDims) -> Vec<T> {
    let n = d.len;
    let mut out = vec![T::zero(); d.batch * d.c_out * n];
    out.par_chunks_mut(d.c_out * n).enumerate().for_each(|(b, out_b)| {
        let x_b = &x[b * d.c_in * n..(b + 1) * d.c_in * n];
        for co in 0..d.c_out {
            let row = &mut out_b[co * n..(co + 1) * n];
            row.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..d.c_in {
                let x_row = &x_b[ci * n..(ci + 1) * n];
                for k in 0..d.kernel {
                    let wv = w[(co * d.c_in + ci) * d.kernel + k];
                    let (s, lo, hi) = d.valid(k);
                    let src = &x_row[(lo as isize + s) as usize..(hi as isize + s) as usize];
                    axpy(&mut row[lo..hi], wv, src);
                }
            }
        }
    });
    out
}

pub(crate) fn conv1d_backward_input<T: Scalar>(w: &[T], g: &[T], d: ConvDims) -> Vec<T> {
    let n = d.len;
    let mut gx = vec![T::zero(); d.batch * d.c_in * n];
    gx.par_chunks_mut(d.c_in * n).enumerate().for_each(|(b, gx_b)| {
        let g_b = &g[b * d.c_out * n..(b + 1) * d.c_out * n];
        for ci in 0..d.c_in {
            let row = &mut gx_b[ci * n..(ci + 1) * n];
            for co in 0..d.c_out {
                let g_row = &g_b[co * n..(co + 1) * n];
                for k in 0..d.kernel {
                    let wv = w[(co * d.c_in + ci) * d.kernel + k];
                    let (s, lo, hi) = d.valid(k);
                    let dst = &mut row[(lo as isize + s) as usize..(hi as isize + s) as usize];
                    axpy(dst, wv, &g_row[lo..hi]);
                }
            }
        }
    });
    gx
}

pub(crate) fn conv1d_backward_weight<T: Scalar>(x: &[T], g: &[T], d: ConvDims) -> Vec<T> {
    let n = d.len;
    let mut gw = vec![T::zero(); d.c_out * d.c_in * d.kernel];
    gw.par_chunks_mut(d.c_in * d.kernel)
        .enumerate()
        .for_each(|(co, gw_co)| {
            for b in 0..d.batch {
                let g_row = &g[(b * d.c_out + co) * n..(b * d.c_out + co + 1) * n];
                for ci in 0..d.c_in {
                    let x_row = &x[(b * d.c_in + ci) * n..(b * d.c_in + ci + 1) * n];
                    for k in 0..d.kernel {
                        let (s, lo, hi) = d.valid(k);
                        let src = &x_row[(lo as isize + s) as usize..(hi as isize + s) as usize];
                        gw_co[ci * d.kernel + k] += dot(&g_row[lo..hi], src);
                    }
                }
            }
        });
    gw
}

pub(crate) fn conv1d_backward_bias<T: Scalar>(g: &[T], d: ConvDims) -> Vec<T> {
    let n = d.len;
    let mut gb = vec![T::zero(); d.c_out];
    for b in 0..d.batch {
        for (co, v) in gb.iter_mut().enumerate() {
            *v += sum(&g[(b * d.c_out + co) * n..(b * d.c_out + co + 1) * n]);
        }
    }
    gb
}

pub(crate) fn linear_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d_in: usize, d_out: usize) -> Vec<T> {
    let rows = x.len() / d_in;
    let mut out = vec![T::zero(); rows * d_out];
    out.par_chunks_mut(d_out)
        .with_min_len(32)
        .enumerate()
        .for_each(|(r, o)| {
            let xr = &x[r * d_in..(r + 1) * d_in];
            for (j, v) in o.iter_mut().enumerate() {
                *v = bias[j] + dot(xr, &w[j * d_in..(j + 1) * d_in]);
            }
        });
    out
}

pub(crate) fn linear_backward_input<T: Scalar>(w: &[T], g: &[T], d_in: usize, d_out: usize) -> Vec<T> {
    let rows = g.len() / d_out;
    let mut gx = vec![T::zero(); rows * d_in];
    gx.par_chunks_mut(d_in)
        .with_min_len(32)
        .enumerate()
        .for_each(|(r, gxr)| {
            let gr = &g[r * d_out..(r + 1) * d_out];
            for (j, &gv) in gr.iter().enumerate() {
                axpy(gxr, gv, &w[j * d_in..(j + 1) * d_in]);
            }
        });
    gx
}

pub(crate) fn linear_backward_weight<T: Scalar>(x: &[T], g: &[T], d_in: usize, d_out: usize) -> Vec<T> {
    let rows = g.len() / d_out;
    let mut gw = vec![T::zero(); d_out * d_in];
    gw.par_chunks_mut(d_in).enumerate().for_each(|(j, gwj)| {
        for r in 0..rows {
            axpy(gwj, g[r * d_out + j], &x[r * d_in..(r + 1) * d_in]);
        }
    });
    gw
}

pub(crate) fn linear_backward_bias<T: Scalar>(g: &[T], d_out: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); d_out];
    for row in g.chunks(d_out) {
        for (b, &v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    gb
}

/// Softmax over the middle axis of an `outer × len × inner` view.
pub(crate) fn softmax_forward<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let mut mx = T::neg_infinity();
            for a in 0..len {
                mx = mx.max(x[idx(a)]);
            }
            let mut total = T::zero();
            for a in 0..len {
                let e = (x[idx(a)] - mx).exp();
                out[idx(a)] = e;
                total += e;
            }
            for a in 0..len {
                out[idx(a)] /= total;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Scalar>(y: &[T], g: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let mut s = T::zero();
            for a in 0..len {
                s += g[idx(a)] * y[idx(a)];
            }
            for a in 0..len {
                gx[idx(a)] = y[idx(a)] * (g[idx(a)] - s);
            }
        }
    }
    gx
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormDims {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub groups: usize,
}

/// Per-frame group normalization of a `B × C × N` tensor: statistics are taken
/// over the channels of each group at every temporal position.
///
/// Returns `(normalized, rstd)` with `rstd` laid out `B × G × N`.
pub(crate) fn group_norm_stats<T: Scalar>(x: &[T], d: NormDims) -> (Vec<T>, Vec<T>) {
    let n = d.len;
    let cg = d.channels / d.groups;
    let inv_cg = cst::<T>(1.0 / cg as f64);
    let eps = cst::<T>(GROUP_NORM_EPS);
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); d.batch * d.groups * n];
    xhat.par_chunks_mut(d.channels * n)
        .zip(rstd.par_chunks_mut(d.groups * n))
        .enumerate()
        .for_each(|(b, (xh_b, rs_b))| {
            let x_b = &x[b * d.channels * n..(b + 1) * d.channels * n];
            let mut mean = vec![T::zero(); n];
            let mut var = vec![T::zero(); n];
            for g in 0..d.groups {
                mean.iter_mut().for_each(|v| *v = T::zero());
                var.iter_mut().for_each(|v| *v = T::zero());
                for c in g * cg..(g + 1) * cg {
                    axpy(&mut mean, inv_cg, &x_b[c * n..(c + 1) * n]);
                }
                for c in g * cg..(g + 1) * cg {
                    let row = &x_b[c * n..(c + 1) * n];
                    for t in 0..n {
                        let dlt = row[t] - mean[t];
                        var[t] += dlt * dlt * inv_cg;
                    }
                }
                let rs = &mut rs_b[g * n..(g + 1) * n];
                for t in 0..n {
                    rs[t] = T::one() / (var[t] + eps).sqrt();
                }
                for c in g * cg..(g + 1) * cg {
                    let row = &x_b[c * n..(c + 1) * n];
                    let out = &mut xh_b[c * n..(c + 1) * n];
                    for t in 0..n {
                        out[t] = (row[t] - mean[t]) * rs[t];
                    }
                }
            }
        });
    (xhat, rstd)
}

/// Gradient w.r.t. the normalization input given the gradient w.r.t. `xhat`.
pub(crate) fn group_norm_backward<T: Scalar>(xhat: &[T], rstd: &[T], gxhat: &[T], d: NormDims) -> Vec<T> {
    let n = d.len;
    let cg = d.channels / d.groups;
    let inv_cg = cst::<T>(1.0 / cg as f64);
    let mut gx = vec![T::zero(); xhat.len()];
    gx.par_chunks_mut(d.channels * n).enumerate().for_each(|(b, gx_b)| {
        let off = b * d.channels * n;
        let mut m1 = vec![T::zero(); n];
        let mut m2 = vec![T::zero(); n];
        for g in 0..d.groups {
            m1.iter_mut().for_each(|v| *v = T::zero());
            m2.iter_mut().for_each(|v| *v = T::zero());
            for c in g * cg..(g + 1) * cg {
                let gh = &gxhat[off + c * n..off + (c + 1) * n];
                let xh = &xhat[off + c * n..off + (c + 1) * n];
                for t in 0..n {
                    m1[t] += gh[t] * inv_cg;
                    m2[t] += gh[t] * xh[t] * inv_cg;
                }
            }
            let rs = &rstd[(b * d.groups + g) * n..(b * d.groups + g + 1) * n];
            for c in g * cg..(g + 1) * cg {
                let gh = &gxhat[off + c * n..off + (c + 1) * n];
                let xh = &xhat[off + c * n..off + (c + 1) * n];
                let out = &mut gx_b[c * n..(c + 1) * n];
                for t in 0..n {
                    out[t] = rs[t] * (gh[t] - m1[t] - xh[t] * m2[t]);
                }
            }
        }
    });
    gx
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub batch: usize,
    pub len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
}

impl AttnDims {
    fn width(&self) -> usize {
        self.heads * self.head_dim
    }
    #[inline]
    fn span(&self, i: usize) -> (usize, usize) {
        let r = self.window / 2;
        (i.saturating_sub(r), (i + r).min(self.len - 1))
    }
}

/// Learned-query local attention. `k`, `v` are `B × N × (H·dh)`, `q` is
/// `H × dh`. Out-of-sequence window positions are excluded from the softmax.
///
/// Returns `(z, attn)` with attention weights laid out `B × N × H × window`
/// (offset `j - i + r`; masked slots hold zero).
pub(crate) fn local_attention_forward<T: Scalar>(k: &[T], v: &[T], q: &[T], d: AttnDims) -> (Vec<T>, Vec<T>) {
    let e = d.width();
    let (n, h, dh, w) = (d.len, d.heads, d.head_dim, d.window);
    let r = w / 2;
    let scale = cst::<T>(1.0 / (dh as f64).sqrt());
    let mut z = vec![T::zero(); d.batch * n * e];
    let mut attn = vec![T::zero(); d.batch * n * h * w];
    z.par_chunks_mut(n * e)
        .zip(attn.par_chunks_mut(n * h * w))
        .enumerate()
        .for_each(|(b, (z_b, a_b))| {
            let k_b = &k[b * n * e..(b + 1) * n * e];
            let v_b = &v[b * n * e..(b + 1) * n * e];
            // the query is shared by every window, so logits depend on j only
            let mut logits = vec![T::zero(); n * h];
            for j in 0..n {
                for hh in 0..h {
                    logits[j * h + hh] =
                        dot(&q[hh * dh..(hh + 1) * dh], &k_b[j * e + hh * dh..j * e + (hh + 1) * dh]) * scale;
                }
            }
            for i in 0..n {
                let (lo, hi) = d.span(i);
                for hh in 0..h {
                    let a = &mut a_b[(i * h + hh) * w..(i * h + hh + 1) * w];
                    let mut mx = T::neg_infinity();
                    for j in lo..=hi {
                        mx = mx.max(logits[j * h + hh]);
                    }
                    let mut total = T::zero();
                    for j in lo..=hi {
                        let ev = (logits[j * h + hh] - mx).exp();
                        a[j + r - i] = ev;
                        total += ev;
                    }
                    let zi = &mut z_b[i * e + hh * dh..i * e + (hh + 1) * dh];
                    for j in lo..=hi {
                        let wgt = a[j + r - i] / total;
                        a[j + r - i] = wgt;
                        axpy(zi, wgt, &v_b[j * e + hh * dh..j * e + (hh + 1) * dh]);
                    }
                }
            }
        });
    (z, attn)
}

/// Returns `(gk, gv, gq)`.
pub(crate) fn local_attention_backward<T: Scalar>(
    k: &[T],
    v: &[T],
    q: &[T],
    attn: &[T],
    gz: &[T],
    d: AttnDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let e = d.width();
    let (n, h, dh, w) = (d.len, d.heads, d.head_dim, d.window);
    let r = w / 2;
    let scale = cst::<T>(1.0 / (dh as f64).sqrt());
    let mut gk = vec![T::zero(); k.len()];
    let mut gv = vec![T::zero(); v.len()];
    let mut gq_parts = vec![T::zero(); d.batch * h * dh];
    gk.par_chunks_mut(n * e)
        .zip(gv.par_chunks_mut(n * e))
        .zip(gq_parts.par_chunks_mut(h * dh))
        .enumerate()
        .for_each(|(b, ((gk_b, gv_b), gq_b))| {
            let k_b = &k[b * n * e..(b + 1) * n * e];
            let v_b = &v[b * n * e..(b + 1) * n * e];
            let gz_b = &gz[b * n * e..(b + 1) * n * e];
            let a_b = &attn[b * n * h * w..(b + 1) * n * h * w];
            let mut glogit = vec![T::zero(); n * h];
            let mut da = vec![T::zero(); w];
            for i in 0..n {
                let (lo, hi) = d.span(i);
                for hh in 0..h {
                    let a = &a_b[(i * h + hh) * w..(i * h + hh + 1) * w];
                    let gzi = &gz_b[i * e + hh * dh..i * e + (hh + 1) * dh];
                    let mut s = T::zero();
                    for j in lo..=hi {
                        let o = j + r - i;
                        let vj = &v_b[j * e + hh * dh..j * e + (hh + 1) * dh];
                        da[o] = dot(gzi, vj);
                        s += a[o] * da[o];
                        axpy(&mut gv_b[j * e + hh * dh..j * e + (hh + 1) * dh], a[o], gzi);
                    }
                    for j in lo..=hi {
                        let o = j + r - i;
                        glogit[j * h + hh] += a[o] * (da[o] - s);
                    }
                }
            }
            for j in 0..n {
                for hh in 0..h {
                    let gl = glogit[j * h + hh] * scale;
                    axpy(
                        &mut gk_b[j * e + hh * dh..j * e + (hh + 1) * dh],
                        gl,
                        &q[hh * dh..(hh + 1) * dh],
                    );
                    axpy(
                        &mut gq_b[hh * dh..(hh + 1) * dh],
                        gl,
                        &k_b[j * e + hh * dh..j * e + (hh + 1) * dh],
                    );
                }
            }
        });
    let mut gq = vec![T::zero(); h * dh];
    for part in gq_parts.chunks(h * dh) {
        for (a, &b) in gq.iter_mut().zip(part) {
            *a += b;
        }
    }
    (gk, gv, gq)
}

/// Half-pixel linear interpolation from `m` to `2m` samples per row.
#[inline]
pub(crate) fn upsample2_taps(i: usize, m: usize) -> [(usize, f64); 2] {
    let base = i / 2;
    if i.is_multiple_of(2) {
        if base == 0 {
            [(0, 1.0), (0, 0.0)]
        } else {
            [(base - 1, 0.25), (base, 0.75)]
        }
    } else if base + 1 >= m {
        [(base, 1.0), (base, 0.0)]
    } else {
        [(base, 0.75), (base + 1, 0.25)]
    }
}

//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! execution order. [`Tape::backward`] walks the record in reverse and
//! accumulates gradients into the leaves that requested them. The kernel set
//! is exactly what the denoiser uses; nothing here broadcasts implicitly.
//!
//! ```
//! use sinmotion::autodiff::Tape;
//! use sinmotion::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(&Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap().with_requires_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

pub(crate) mod kernels;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{cst, Scalar, Tensor};
use kernels::{AttnDims, ConvDims, NormDims};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        d_in: usize,
        d_out: usize,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    GroupNorm {
        x: Var,
        scale: Option<Var>,
        shift: Option<Var>,
        dims: NormDims,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Silu {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Reshape {
        x: Var,
    },
    Transpose12 {
        x: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
        total: usize,
    },
    Slice {
        x: Var,
        outer: usize,
        len_in: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    AvgPool2 {
        x: Var,
    },
    Upsample2 {
        x: Var,
        m: usize,
    },
    LocalAttention {
        k: Var,
        v: Var,
        q: Var,
        dims: AttnDims,
        attn: Vec<T>,
    },
    Sum {
        x: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for one forward pass and replays them backwards.
///
/// A tape is single-threaded; kernels may still parallelize internally.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn acc_into<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`, keeping earlier
    /// leaves (and their gradients) in place for the next pass.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.leaf_grads.truncate(len);
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf holding a copy of `t`; it receives a gradient when
    /// `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Records a leaf that never receives a gradient, taking ownership.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Adds this leaf's accumulated gradient into `t.grad`.
    pub fn write_grad(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        if let Some(g) = &self.leaf_grads[v.0] {
            t.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Zero-padded temporal cross-correlation, `B×Cin×N` by `Cout×Cin×k`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return Err(Error::shape(format!(
                "conv1d expects input B×C×N, weight O×C×k, bias O; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv1d input channels: input has {} but weight expects {}",
                xs[1], ws[1]
            )));
        }
        if bs[0] != ws[0] {
            return Err(Error::shape(format!(
                "conv1d output channels: bias has {} but weight produces {}",
                bs[0], ws[0]
            )));
        }
        if ws[2] % 2 == 0 {
            return Err(Error::shape(format!("conv1d kernel size must be odd, got {}", ws[2])));
        }
        let dims = ConvDims {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            len: xs[2],
            kernel: ws[2],
        };
        let out = kernels::conv1d_forward(self.value(x), self.value(w), self.value(b), dims);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            vec![dims.batch, dims.c_out, dims.len],
            out,
            Op::Conv1d { x, w, b, dims },
            rg,
        ))
    }

    /// Affine map on the last axis: `x·Wᵀ + b` with `W` of shape `Dout×Din`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w), self.shape(b));
        if ws.len() != 2 || bs.len() != 1 || xs.is_empty() {
            return Err(Error::shape(format!(
                "linear expects weight Dout×Din and bias Dout; got {ws:?}, {bs:?}"
            )));
        }
        let (d_out, d_in) = (ws[0], ws[1]);
        if *xs.last().unwrap() != d_in {
            return Err(Error::shape(format!(
                "linear input last dimension is {} but weight expects {}",
                xs.last().unwrap(),
                d_in
            )));
        }
        if bs[0] != d_out {
            return Err(Error::shape(format!(
                "linear bias has {} entries but weight produces {}",
                bs[0], d_out
            )));
        }
        let out = kernels::linear_forward(self.value(x), self.value(w), self.value(b), d_in, d_out);
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(shape, out, Op::Linear { x, w, b, d_in, d_out }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        if self.value(x).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let out = kernels::softmax_forward(self.value(x), outer, len, inner);
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Softmax { x, outer, len, inner }, rg))
    }

    /// Group normalization of `B×C×N` followed by `·(1+scale) + shift`, with
    /// `scale`/`shift` of shape `B×C` broadcast over time. Statistics are taken
    /// over the channels of each group at each frame, which keeps the layer
    /// local in time.
    pub fn group_norm(&mut self, x: Var, groups: usize, scale: Option<Var>, shift: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("group_norm expects B×C×N, got {xs:?}")));
        }
        if groups == 0 || !xs[1].is_multiple_of(groups) {
            return Err(Error::shape(format!(
                "group_norm: {} channels not divisible into {} groups",
                xs[1], groups
            )));
        }
        for s in [scale, shift].into_iter().flatten() {
            check_same("group_norm scale/shift", self.shape(s), &xs[..2])?;
        }
        let dims = NormDims {
            batch: xs[0],
            channels: xs[1],
            len: xs[2],
            groups,
        };
        let (xhat, rstd) = kernels::group_norm_stats(self.value(x), dims);
        let n = dims.len;
        let mut out = xhat.clone();
        if scale.is_some() || shift.is_some() {
            let sc = scale.map(|s| self.value(s));
            let sh = shift.map(|s| self.value(s));
            for (bc, row) in out.chunks_mut(n).enumerate() {
                let m = T::one() + sc.map_or(T::zero(), |s| s[bc]);
                let a = sh.map_or(T::zero(), |s| s[bc]);
                row.iter_mut().for_each(|v| *v = *v * m + a);
            }
        }
        let mut deps = vec![x];
        deps.extend(scale);
        deps.extend(shift);
        let rg = self.rg(&deps);
        Ok(self.push(
            xs,
            out,
            Op::GroupNorm {
                x,
                scale,
                shift,
                dims,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v / (T::one() + (-v).exp())).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, out, Op::Silu { x }, rg)
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; identity when
    /// `training` is false or `p` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = cst::<T>(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Dropout { x, mask }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.shape(a), self.shape(b))?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.shape(a), self.shape(b))?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, out, Op::Scale { x, c }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(x),
                shape
            )));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape { x }, rg))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!("transpose12 expects rank 3, got {s:?}")));
        }
        let (batch, rows, cols) = (s[0], s[1], s[2]);
        let src = self.value(x);
        let mut out = vec![T::zero(); src.len()];
        for b in 0..batch {
            let off = b * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    out[off + c * rows + r] = src[off + r * cols + c];
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            vec![batch, cols, rows],
            out,
            Op::Transpose12 { x, batch, rows, cols },
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        let mut meta = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape(format!(
                    "concat along axis {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            total += s[axis];
            meta.push((p, s[axis]));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, len) in &meta {
                let v = self.value(p);
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: meta,
                outer,
                inner,
                total,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape(format!(
                "slice [{start}, {}) on axis {axis} out of range for {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len_in = s[axis];
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * len_in + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(
            shape,
            out,
            Op::Slice {
                x,
                outer,
                len_in,
                start,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Stride-2 average over the last axis (length must be even).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().ok_or_else(|| Error::shape("avg_pool2 of a scalar"))?;
        if n % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 needs an even length, got {n}")));
        }
        let half = cst::<T>(0.5);
        let out: Vec<T> = self.value(x).chunks(2).map(|p| (p[0] + p[1]) * half).collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = n / 2;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::AvgPool2 { x }, rg))
    }

    /// Half-pixel linear interpolation doubling the last axis.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let m = *s.last().ok_or_else(|| Error::shape("upsample2 of a scalar"))?;
        let src = self.value(x);
        let mut out = Vec::with_capacity(src.len() * 2);
        for row in src.chunks(m) {
            for i in 0..2 * m {
                let [(a, wa), (b, wb)] = kernels::upsample2_taps(i, m);
                out.push(row[a] * cst::<T>(wa) + row[b] * cst::<T>(wb));
            }
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = 2 * m;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Upsample2 { x, m }, rg))
    }

    /// Learned-query attention over `window`-frame neighbourhoods.
    ///
    /// `k` and `v` are `B×N×(H·dh)`, one learned query per head in `q`
    /// (`H×dh`). Window positions past either sequence end are masked out.
    pub fn local_attention(&mut self, k: Var, v: Var, q: Var, window: usize) -> Result<Var> {
        let ks = self.shape(k).to_vec();
        check_same("local_attention keys/values", &ks, self.shape(v))?;
        let qs = self.shape(q).to_vec();
        if ks.len() != 3 || qs.len() != 2 || qs[0] * qs[1] != ks[2] {
            return Err(Error::shape(format!(
                "local_attention expects keys B×N×(H·dh) and queries H×dh; got {ks:?}, {qs:?}"
            )));
        }
        if window.is_multiple_of(2) {
            return Err(Error::invalid(format!("attention window must be odd, got {window}")));
        }
        if window > 2 * ks[1] {
            return Err(Error::invalid(format!(
                "attention window {window} exceeds twice the sequence length {}",
                ks[1]
            )));
        }
        let dims = AttnDims {
            batch: ks[0],
            len: ks[1],
            heads: qs[0],
            head_dim: qs[1],
            window,
        };
        let (z, attn) = kernels::local_attention_forward(self.value(k), self.value(v), self.value(q), dims);
        let rg = self.rg(&[k, v, q]);
        Ok(self.push(ks, z, Op::LocalAttention { k, v, q, dims, attn }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = kernels::sum(self.value(x));
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, cst::<T>(1.0 / n as f64))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mse", self.shape(a), self.shape(b))?;
        let n = self.value(a).len();
        let mut acc = T::zero();
        for (&x, &y) in self.value(a).iter().zip(self.value(b)) {
            let d = x - y;
            acc += d * d;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![1], vec![acc / cst::<T>(n as f64)], Op::Mse { a, b }, rg))
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let len = g.len();
                acc_into(&mut self.leaf_grads[id], len, |b| add_assign(b, &g));
            } else {
                self.backward_node(id, &g, &mut grads);
            }
        }
        Ok(())
    }

    fn backward_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let len_of = |v: Var| nodes[v.0].value.len();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].requires_grad {
                acc_into(&mut grads[v.0], len_of(v), |b| f(b));
            }
        };
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, dims } => {
                if wants(*x) {
                    let gx = kernels::conv1d_backward_input(self.value(*w), g, *dims);
                    acc(*x, &mut |buf| add_assign(buf, &gx));
                }
                if wants(*w) {
                    let gw = kernels::conv1d_backward_weight(self.value(*x), g, *dims);
                    acc(*w, &mut |buf| add_assign(buf, &gw));
                }
                if wants(*b) {
                    let gb = kernels::conv1d_backward_bias(g, *dims);
                    acc(*b, &mut |buf| add_assign(buf, &gb));
                }
            }
            Op::Linear { x, w, b, d_in, d_out } => {
                if wants(*x) {
                    let gx = kernels::linear_backward_input(self.value(*w), g, *d_in, *d_out);
                    acc(*x, &mut |buf| add_assign(buf, &gx));
                }
                if wants(*w) {
                    let gw = kernels::linear_backward_weight(self.value(*x), g, *d_in, *d_out);
                    acc(*w, &mut |buf| add_assign(buf, &gw));
                }
                if wants(*b) {
                    let gb = kernels::linear_backward_bias(g, *d_out);
                    acc(*b, &mut |buf| add_assign(buf, &gb));
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                let gx = kernels::softmax_backward(&nodes[id].value, g, *outer, *len, *inner);
                acc(*x, &mut |buf| add_assign(buf, &gx));
            }
            Op::GroupNorm {
                x,
                scale,
                shift,
                dims,
                xhat,
                rstd,
            } => {
                let n = dims.len;
                if let Some(s) = scale {
                    let mut gs = vec![T::zero(); dims.batch * dims.channels];
                    for (bc, v) in gs.iter_mut().enumerate() {
                        *v = kernels::dot(&g[bc * n..(bc + 1) * n], &xhat[bc * n..(bc + 1) * n]);
                    }
                    acc(*s, &mut |buf| add_assign(buf, &gs));
                }
                if let Some(s) = shift {
                    let gs: Vec<T> = g.chunks(n).map(kernels::sum).collect();
                    acc(*s, &mut |buf| add_assign(buf, &gs));
                }
                if wants(*x) {
                    let gxhat: Vec<T> = match scale {
                        Some(s) => {
                            let sc = self.value(*s);
                            g.chunks(n)
                                .enumerate()
                                .flat_map(|(bc, row)| {
                                    let m = T::one() + sc[bc];
                                    row.iter().map(move |&v| v * m)
                                })
                                .collect()
                        }
                        None => g.to_vec(),
                    };
                    let gx = kernels::group_norm_backward(xhat, rstd, &gxhat, *dims);
                    acc(*x, &mut |buf| add_assign(buf, &gx));
                }
            }
            Op::Silu { x } => {
                let xv = self.value(*x);
                acc(*x, &mut |buf| {
                    for ((b, &gv), &v) in buf.iter_mut().zip(g).zip(xv) {
                        let s = T::one() / (T::one() + (-v).exp());
                        *b += gv * s * (T::one() + v * (T::one() - s));
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |buf| {
                for ((b, &gv), &m) in buf.iter_mut().zip(g).zip(mask) {
                    *b += gv * m;
                }
            }),
            Op::Add { a, b } => {
                acc(*a, &mut |buf| add_assign(buf, g));
                acc(*b, &mut |buf| add_assign(buf, g));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |buf| {
                    for ((d, &gv), &o) in buf.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((d, &gv), &o) in buf.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::Scale { x, c } => acc(*x, &mut |buf| axpy_into(buf, *c, g)),
            Op::Reshape { x } => acc(*x, &mut |buf| add_assign(buf, g)),
            Op::Transpose12 { x, batch, rows, cols } => acc(*x, &mut |buf| {
                for b in 0..*batch {
                    let off = b * rows * cols;
                    for r in 0..*rows {
                        for c in 0..*cols {
                            buf[off + r * cols + c] += g[off + c * rows + r];
                        }
                    }
                }
            }),
            Op::Concat {
                parts,
                outer,
                inner,
                total,
            } => {
                let mut offset = 0;
                for &(p, len) in parts {
                    acc(p, &mut |buf| {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_assign(&mut buf[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice {
                x,
                outer,
                len_in,
                start,
                len,
                inner,
            } => acc(*x, &mut |buf| {
                for o in 0..*outer {
                    let base = (o * len_in + start) * inner;
                    add_assign(
                        &mut buf[base..base + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }),
            Op::AvgPool2 { x } => {
                let half = cst::<T>(0.5);
                acc(*x, &mut |buf| {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[2 * i] += gv * half;
                        buf[2 * i + 1] += gv * half;
                    }
                })
            }
            Op::Upsample2 { x, m } => acc(*x, &mut |buf| {
                for (r, grow) in g.chunks(2 * m).enumerate() {
                    let dst = &mut buf[r * m..(r + 1) * m];
                    for (i, &gv) in grow.iter().enumerate() {
                        let [(a, wa), (b, wb)] = kernels::upsample2_taps(i, *m);
                        dst[a] += gv * cst::<T>(wa);
                        dst[b] += gv * cst::<T>(wb);
                    }
                }
            }),
            Op::LocalAttention { k, v, q, dims, attn } => {
                let (gk, gv, gq) =
                    kernels::local_attention_backward(self.value(*k), self.value(*v), self.value(*q), attn, g, *dims);
                acc(*k, &mut |buf| add_assign(buf, &gk));
                acc(*v, &mut |buf| add_assign(buf, &gv));
                acc(*q, &mut |buf| add_assign(buf, &gq));
            }
            Op::Sum { x } => {
                let gv = g[0];
                acc(*x, &mut |buf| buf.iter_mut().for_each(|b| *b += gv));
            }
            Op::Mse { a, b } => {
                let n = cst::<T>(self.value(*a).len() as f64);
                let c = cst::<T>(2.0) * g[0] / n;
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |buf| {
                    for ((d, &x), &y) in buf.iter_mut().zip(av).zip(bv) {
                        *d += c * (x - y);
                    }
                });
                acc(*b, &mut |buf| {
                    for ((d, &x), &y) in buf.iter_mut().zip(av).zip(bv) {
                        *d -= c * (x - y);
                    }
                });
            }
        }
    }
}

fn axpy_into<T: Scalar>(dst: &mut [T], c: T, src: &[T]) {
    kernels::axpy(dst, c, src);
}

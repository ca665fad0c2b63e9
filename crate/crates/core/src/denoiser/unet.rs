use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::denoiser::config::DenoiserConfig;
use crate::diffusion::X0Predictor;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Uniform(f64),
    Normal(f64),
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn down_res(l: usize, r: usize) -> String {
    format!("down.{l}.{r}.res")
}
fn down_qna(l: usize, r: usize) -> String {
    format!("down.{l}.{r}.qna")
}
fn up_res(l: usize, r: usize) -> String {
    format!("up.{l}.{r}.res")
}
fn up_qna(l: usize, r: usize) -> String {
    format!("up.{l}.{r}.qna")
}

struct Specs<'a> {
    cfg: &'a DenoiserConfig,
    out: Vec<ParamSpec>,
}

impl Specs<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.out.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, p: &str, cin: usize, cout: usize, k: usize, zero: bool) {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let init = if zero { Init::Zero } else { Init::Uniform(bound) };
        self.push(format!("{p}.weight"), vec![cout, cin, k], init);
        self.push(format!("{p}.bias"), vec![cout], init);
    }

    fn linear(&mut self, p: &str, din: usize, dout: usize) {
        let bound = 1.0 / (din as f64).sqrt();
        self.push(format!("{p}.weight"), vec![dout, din], Init::Uniform(bound));
        self.push(format!("{p}.bias"), vec![dout], Init::Uniform(bound));
    }

    fn res(&mut self, p: &str, cin: usize, cout: usize) {
        let k = self.cfg.kernel_size;
        let emb_out = if self.cfg.use_scale_shift_norm { 2 * cout } else { cout };
        self.conv(&format!("{p}.conv1"), cin, cout, k, false);
        self.linear(&format!("{p}.emb"), self.cfg.emb_dim(), emb_out);
        self.conv(&format!("{p}.conv2"), cout, cout, k, false);
        if cin != cout {
            self.conv(&format!("{p}.skip"), cin, cout, 1, false);
        }
    }

    fn qna(&mut self, p: &str, c: usize) {
        let a = self.cfg.attn_dim();
        self.linear(&format!("{p}.key"), c, a);
        self.linear(&format!("{p}.value"), c, a);
        let std = 1.0 / (self.cfg.head_dim as f64).sqrt();
        self.push(
            format!("{p}.query"),
            vec![self.cfg.num_heads, self.cfg.head_dim],
            Init::Normal(std),
        );
        self.linear(&format!("{p}.proj"), a, c);
    }
}

/// Every parameter of the architecture in a fixed order.
pub fn param_specs(cfg: &DenoiserConfig) -> Vec<ParamSpec> {
    let mut s = Specs { cfg, out: Vec::new() };
    let ch = cfg.num_channels;
    let d = cfg.depth;
    s.linear("time.lin1", ch, cfg.emb_dim());
    s.linear("time.lin2", cfg.emb_dim(), cfg.emb_dim());
    s.conv("input", cfg.features, ch, cfg.kernel_size, false);
    let mut width = ch;
    for l in 0..d {
        for r in 0..cfg.num_res_blocks {
            s.res(&down_res(l, r), width, cfg.width(l));
            width = cfg.width(l);
            s.qna(&down_qna(l, r), width);
        }
    }
    s.res("mid.res", width, width);
    s.qna("mid.qna", width);
    for l in (0..d).rev() {
        for r in 0..cfg.num_res_blocks {
            let cin = if r == 0 { width + cfg.width(l) } else { cfg.width(l) };
            s.res(&up_res(l, r), cin, cfg.width(l));
            s.qna(&up_qna(l, r), cfg.width(l));
        }
        width = cfg.width(l);
    }
    s.conv("out", ch, cfg.features, cfg.kernel_size, true);
    s.out
}

/// Sinusoidal embedding of diffusion steps, `B×dim`, cosines first.
pub fn timestep_embedding<T: Scalar>(steps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp() * t as f64);
        let args: Vec<f64> = freqs.collect();
        data.extend(args.iter().map(|a| T::of_f64(a.cos())));
        data.extend(args.iter().map(|a| T::of_f64(a.sin())));
    }
    Tensor::new(&[steps.len(), dim], data).expect("embedding shape")
}

/// Parameter handles of a [`Denoiser`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn pair(&self, p: &str) -> (Var, Var) {
        (self.get(&format!("{p}.weight")), self.get(&format!("{p}.bias")))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Shallow 1D UNet with learned-query local attention predicting `x̂0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser<T: Scalar> {
    config: DenoiserConfig,
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Denoiser<T> {
    /// Fresh weights; the output convolution starts at zero.
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        Self::init(config, rng, false)
    }

    /// Fresh weights with a random output convolution, so that every
    /// parameter influences the output.
    pub fn with_random_output<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        Self::init(config, rng, true)
    }

    fn init<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R, random_output: bool) -> Result<Self> {
        config.validate()?;
        let mut params = IndexMap::new();
        for spec in param_specs(&config) {
            let init = match spec.init {
                Init::Zero if random_output => {
                    let fan_in = config.num_channels * config.kernel_size;
                    Init::Uniform(1.0 / (fan_in as f64).sqrt())
                }
                other => other,
            };
            let t = match init {
                Init::Uniform(b) => Tensor::uniform(&spec.shape, b, rng),
                Init::Normal(std) => Tensor::randn(&spec.shape, rng).map(|v| v * T::of_f64(std)),
                Init::Zero => Tensor::zeros(&spec.shape),
            };
            params.insert(spec.name, t);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing tensors; names and shapes must match the config.
    pub fn from_params(config: DenoiserConfig, mut params: IndexMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "config expects {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        let mut ordered = IndexMap::with_capacity(specs.len());
        for spec in specs {
            let t = params
                .swap_remove(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{}'", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, config expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            ordered.insert(spec.name, t);
        }
        Ok(Self {
            config,
            params: ordered,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter as a leaf (gradient-tracking when `grad`).
    pub fn bind(&self, tape: &mut Tape<T>, grad: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if grad {
                    tape.leaf(&v.clone().with_requires_grad(true))
                } else {
                    tape.leaf(v)
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Records `x̂0` for `x` of shape `B×N×F` at per-element steps `t`.
    /// Dropout is active only when `training`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        b: &Bound,
        x: Var,
        t: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let cfg = &self.config;
        let xs = tape.shape(x).to_vec();
        if xs.len() != 3 || xs[2] != cfg.features {
            return Err(Error::shape(format!(
                "denoiser input must be B×N×{}, got {xs:?}",
                cfg.features
            )));
        }
        if t.len() != xs[0] {
            return Err(Error::shape(format!("{} steps given for batch of {}", t.len(), xs[0])));
        }
        cfg.check_frames(xs[1])?;
        let mut ctx = Ctx {
            tape,
            b,
            cfg,
            training,
            rng,
        };
        let emb = ctx.time_embedding(t)?;
        let xt = ctx.tape.transpose12(x)?;
        let mut h = ctx.conv("input", xt)?;
        let mut skips = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            for r in 0..cfg.num_res_blocks {
                h = ctx.res(&down_res(l, r), h, emb)?;
                h = ctx.qna(&down_qna(l, r), h)?;
            }
            skips.push(h);
            if l + 1 < cfg.depth {
                h = ctx.tape.avg_pool2(h)?;
            }
        }
        h = ctx.res("mid.res", h, emb)?;
        h = ctx.qna("mid.qna", h)?;
        for l in (0..cfg.depth).rev() {
            if l + 1 < cfg.depth {
                h = ctx.tape.upsample2(h)?;
            }
            h = ctx.tape.concat(&[h, skips[l]], 1)?;
            for r in 0..cfg.num_res_blocks {
                h = ctx.res(&up_res(l, r), h, emb)?;
                h = ctx.qna(&up_qna(l, r), h)?;
            }
        }
        let g = ctx.tape.group_norm(h, cfg.norm_groups, None, None)?;
        let g = ctx.tape.silu(g);
        let o = ctx.conv("out", g)?;
        ctx.tape.transpose12(o)
    }

    /// Eval-mode prediction for `x` of shape `B×N×F` without gradients.
    pub fn predict(&self, x: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &b, xv, t, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(tape.tensor(out))
    }

    /// Single-sample predictor that keeps the parameters bound on one tape
    /// across calls and counts evaluations.
    pub fn predictor(&self) -> Predictor<'_, T> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let base = tape.len();
        Predictor {
            model: self,
            tape,
            bound,
            base,
            evaluations: 0,
        }
    }
}

struct Ctx<'a, T: Scalar, R: ?Sized> {
    tape: &'a mut Tape<T>,
    b: &'a Bound,
    cfg: &'a DenoiserConfig,
    training: bool,
    rng: &'a mut R,
}

impl<T: Scalar, R: Rng + ?Sized> Ctx<'_, T, R> {
    fn conv(&mut self, p: &str, x: Var) -> Result<Var> {
        let (w, b) = self.b.pair(p);
        self.tape.conv1d(x, w, b)
    }

    fn linear(&mut self, p: &str, x: Var) -> Result<Var> {
        let (w, b) = self.b.pair(p);
        self.tape.linear(x, w, b)
    }

    /// `silu(MLP(sinusoid(t)))`, shared by every residual block.
    fn time_embedding(&mut self, t: &[usize]) -> Result<Var> {
        let s = self.tape.constant(timestep_embedding(t, self.cfg.num_channels));
        let h = self.linear("time.lin1", s)?;
        let h = self.tape.silu(h);
        let h = self.linear("time.lin2", h)?;
        Ok(self.tape.silu(h))
    }

    fn res(&mut self, p: &str, x: Var, emb: Var) -> Result<Var> {
        let cin = self.tape.shape(x)[1];
        let h = self.conv(&format!("{p}.conv1"), x)?;
        let cout = self.tape.shape(h)[1];
        let e = self.linear(&format!("{p}.emb"), emb)?;
        let groups = self.cfg.norm_groups;
        let h = if self.cfg.use_scale_shift_norm {
            let scale = self.tape.slice(e, 1, 0, cout)?;
            let shift = self.tape.slice(e, 1, cout, cout)?;
            self.tape.group_norm(h, groups, Some(scale), Some(shift))?
        } else {
            self.tape.group_norm(h, groups, None, Some(e))?
        };
        let h = self.tape.silu(h);
        let h = self.tape.dropout(h, self.cfg.dropout, self.training, self.rng)?;
        let h = self.conv(&format!("{p}.conv2"), h)?;
        let skip = if cin != cout {
            self.conv(&format!("{p}.skip"), x)?
        } else {
            x
        };
        self.tape.add(skip, h)
    }

    /// `x + proj(attend(q̃, key(gn(x)), value(gn(x))))` over local windows.
    fn qna(&mut self, p: &str, x: Var) -> Result<Var> {
        let g = self.tape.group_norm(x, self.cfg.norm_groups, None, None)?;
        let g = self.tape.transpose12(g)?;
        let k = self.linear(&format!("{p}.key"), g)?;
        let v = self.linear(&format!("{p}.value"), g)?;
        let q = self.b.get(&format!("{p}.query"));
        let z = self.tape.local_attention(k, v, q, self.cfg.qna_window)?;
        let o = self.linear(&format!("{p}.proj"), z)?;
        let o = self.tape.transpose12(o)?;
        self.tape.add(x, o)
    }
}

pub struct Predictor<'a, T: Scalar> {
    model: &'a Denoiser<T>,
    tape: Tape<T>,
    bound: Bound,
    base: usize,
    evaluations: usize,
}

impl<T: Scalar> Predictor<'_, T> {
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

impl<T: Scalar> X0Predictor<T> for Predictor<'_, T> {
    fn predict_x0(&mut self, x_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let s = x_t.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("predictor expects N×F, got {s:?}")));
        }
        self.evaluations += 1;
        let x = self.tape.constant(x_t.clone().reshape(&[1, s[0], s[1]])?);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self
            .model
            .forward(&mut self.tape, &self.bound, x, &[t], false, &mut rng);
        let result = out.and_then(|o| self.tape.tensor(o).reshape(&s));
        self.tape.truncate(self.base);
        result
    }
}

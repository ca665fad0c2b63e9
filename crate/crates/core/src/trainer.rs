//! Optimization loop over a single motion: every batch holds independent
//! noisings of the whole sequence.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::checkpoint::{Checkpoint, TrainerState};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{training_loss, NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Normalizer};
use crate::seed::{derive_seed, rng_from, stream};
use crate::tensor::{cst, Scalar, Tensor};

/// Consecutive non-finite steps tolerated before training aborts.
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub num_steps: usize,
    pub lr: f64,
    pub lr_gamma: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub diffusion_steps: usize,
    pub noise_schedule: ScheduleKind,
    /// Save every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Rows of the loss log aggregate this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            num_steps: 60_000,
            lr: 1e-4,
            lr_gamma: 0.99998,
            warmup_steps: 0,
            weight_decay: 0.0,
            seed: 0,
            diffusion_steps: 1000,
            noise_schedule: ScheduleKind::Cosine,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad(format!("lr_gamma must lie in (0, 1], got {}", self.lr_gamma));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and nonnegative, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be finite and nonnegative, got {}",
                self.weight_decay
            ));
        }
        if self.diffusion_steps < 2 {
            return bad(format!(
                "diffusion_steps must be at least 2, got {}",
                self.diffusion_steps
            ));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        Ok(())
    }

    /// Learning rate used by step `n` (0-based): `lr·γⁿ`, scaled by a linear
    /// ramp during warmup.
    pub fn lr_at(&self, n: usize) -> f64 {
        let warm = if self.warmup_steps > 0 {
            ((n + 1) as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        self.lr * warm * self.lr_gamma.powf(n as f64)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self.noise_schedule {
            ScheduleKind::Cosine => NoiseSchedule::cosine(self.diffusion_steps),
        }
    }
}

/// Adaptive-moment optimizer with bias correction and decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let zeros: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn from_state(t: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Checkpoint("optimizer moments do not pair up".into()));
        }
        Ok(Self {
            t,
            m,
            v,
            ..Self::new(std::iter::empty())
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update to `params` (in the order the optimizer was built
    /// with) from the matching `grads`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[&[T]],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2): (T, T) = (cst(self.beta1), cst(self.beta2));
        let (c1, c2): (T, T) = (cst(1.0 - self.beta1), cst(1.0 - self.beta2));
        let bc1: T = cst(1.0 - self.beta1.powi(t));
        let bc2: T = cst(1.0 - self.beta2.powi(t));
        let eps: T = cst(self.eps);
        let lr_t: T = cst(lr);
        let decay: T = cst(1.0 - lr * weight_decay);
        let mut count = 0;
        for (k, p) in params.into_iter().enumerate() {
            let g = grads
                .get(k)
                .ok_or_else(|| Error::invalid("fewer gradients than parameters"))?;
            if k >= self.m.len() || g.len() != p.numel() || p.shape() != self.m[k].shape() {
                return Err(Error::shape(format!("optimizer slot {k} does not match its parameter")));
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w = *w * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
            count += 1;
        }
        if count != self.m.len() || grads.len() != count {
            return Err(Error::invalid(format!(
                "optimizer holds {} slots, got {count} parameters and {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// One record per step that updated the parameters.
    pub records: Vec<StepRecord>,
    pub skipped_steps: usize,
}

impl TrainReport {
    /// Mean loss of records whose step lies in `range` (1-based, half-open).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let sel: Vec<f64> = self
            .records
            .iter()
            .filter(|r| range.contains(&r.step))
            .map(|r| r.loss)
            .collect();
        (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
    }

    /// CSV with columns `step,loss,lr,wall_ms`, one row per `every` steps
    /// (mean loss and wall time of the interval, lr of its last step).
    pub fn write_csv<W: Write>(&self, out: W, every: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "loss", "lr", "wall_ms"]).map_err(csv_err)?;
        for chunk in self.records.chunks(every.max(1)) {
            let n = chunk.len() as f64;
            let last = chunk[chunk.len() - 1];
            let loss = chunk.iter().map(|r| r.loss).sum::<f64>() / n;
            let ms = chunk.iter().map(|r| r.wall_ms).sum::<f64>() / n;
            w.write_record(&[
                last.step.to_string(),
                loss.to_string(),
                last.lr.to_string(),
                format!("{ms:.3}"),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("loss log", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path, every: usize) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), every)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// What happened in one call to [`Trainer::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Updated(StepRecord),
    /// The loss or a gradient was non-finite; parameters were left alone.
    Skipped {
        step: usize,
        consecutive: usize,
    },
}

/// Resumable training state over one normalized motion.
pub struct Trainer {
    model: Denoiser<f32>,
    adam: Adam<f32>,
    schedule: NoiseSchedule,
    data: Tensor<f32>,
    config: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
    consecutive: usize,
    report: TrainReport,
}

impl Trainer {
    /// Fresh model from `config.seed` trained on `data` (`N×F`, already
    /// normalized).
    pub fn new(model_config: DenoiserConfig, data: Tensor<f32>, config: TrainConfig) -> Result<Self> {
        let model = Denoiser::new(model_config, &mut rng_from(config.seed, stream::INIT))?;
        Self::with_model(model, data, config)
    }

    pub fn with_model(model: Denoiser<f32>, data: Tensor<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let s = data.shape();
        if s.len() != 2 || s[1] != model.config().features {
            return Err(Error::shape(format!(
                "training data {s:?} does not match a model with {} features",
                model.config().features
            )));
        }
        model.config().check_frames(s[0])?;
        let adam = Adam::new(model.params().values());
        let rng = rng_from(config.seed, stream::TRAIN);
        Ok(Self {
            schedule: config.schedule()?,
            model,
            adam,
            data,
            config,
            rng,
            step: 0,
            consecutive: 0,
            report: TrainReport::default(),
        })
    }

    /// Continues from a checkpoint written with trainer state.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let state = ckpt
            .trainer
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
        let mut t = Self::with_model(ckpt.model.clone(), ckpt.train_data.clone(), ckpt.train.clone())?;
        t.adam = Adam::from_state(state.adam_steps, state.adam_m.clone(), state.adam_v.clone())?;
        if t.adam.m.len() != t.model.params().len() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        t.rng = ChaCha8Rng::seed_from_u64(derive_seed(ckpt.train.seed, stream::TRAIN));
        t.rng.set_word_pos(state.rng_word_pos);
        t.step = state.step;
        t.consecutive = state.consecutive_nonfinite;
        Ok(t)
    }

    pub fn model(&self) -> &Denoiser<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Changes the step count [`Trainer::run`] stops at.
    pub fn set_num_steps(&mut self, num_steps: usize) {
        self.config.num_steps = num_steps;
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn state(&self) -> TrainerState {
        let (m, v) = self.adam.moments();
        TrainerState {
            step: self.step,
            consecutive_nonfinite: self.consecutive,
            rng_word_pos: self.rng.get_word_pos(),
            adam_steps: self.adam.steps(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
        }
    }

    /// One optimizer iteration. Errors with [`Error::Divergence`] once
    /// [`DIVERGENCE_PATIENCE`] consecutive steps were non-finite.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let start = Instant::now();
        let n = self.step;
        let lr = self.config.lr_at(n);
        let mut tape = Tape::<f32>::new();
        let bound = self.model.bind(&mut tape, true);
        let model = &self.model;
        let loss = training_loss(
            &mut tape,
            &self.data,
            &self.schedule,
            &mut self.rng,
            self.config.batch_size,
            |tape, x, t, rng| model.forward(tape, &bound, x, t, true, rng),
        );
        self.step += 1;
        let finite = match loss {
            Ok(l) => {
                let value = tape.scalar(l);
                if value.is_finite() {
                    tape.backward(l)?;
                    let grads: Vec<Vec<f32>> = bound
                        .vars()
                        .map(|(_, v)| {
                            tape.grad(v)
                                .map(<[f32]>::to_vec)
                                .unwrap_or_else(|| vec![0.0; tape.shape(v).iter().product()])
                        })
                        .collect();
                    if grads.iter().all(|g| g.iter().all(|x| x.is_finite())) {
                        let refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
                        self.adam.step(
                            self.model.params_mut().map(|(_, p)| p),
                            &refs,
                            lr,
                            self.config.weight_decay,
                        )?;
                        Some(value as f64)
                    } else {
                        None
                    }
                } else {
                    None
                }
            }
            Err(Error::NonFinite(_)) => None,
            Err(e) => return Err(e),
        };
        match finite {
            Some(loss) => {
                self.consecutive = 0;
                let rec = StepRecord {
                    step: self.step,
                    loss,
                    lr,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                };
                self.report.records.push(rec);
                Ok(StepOutcome::Updated(rec))
            }
            None => {
                self.consecutive += 1;
                self.report.skipped_steps += 1;
                log::warn!(
                    "step {}: non-finite loss, update skipped ({} in a row)",
                    self.step,
                    self.consecutive
                );
                if self.consecutive >= DIVERGENCE_PATIENCE {
                    return Err(Error::Divergence {
                        step: self.step,
                        consecutive: self.consecutive,
                    });
                }
                Ok(StepOutcome::Skipped {
                    step: self.step,
                    consecutive: self.consecutive,
                })
            }
        }
    }

    /// Steps until `config.num_steps` are done, calling `observer` after each.
    pub fn run(&mut self, mut observer: impl FnMut(&Self, &StepOutcome) -> Result<()>) -> Result<()> {
        while self.step < self.config.num_steps {
            let outcome = self.step()?;
            if let StepOutcome::Updated(r) = outcome {
                if r.step % self.config.log_every == 0 {
                    log::info!("step {} loss {:.5} lr {:.3e}", r.step, r.loss, r.lr);
                }
            }
            observer(self, &outcome)?;
        }
        Ok(())
    }

    /// Snapshot including optimizer state, ready for [`Trainer::resume`].
    pub fn checkpoint(&self, source: &TrainingSource) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.config.clone(),
            normalizer: source.normalizer.clone(),
            skeleton: source.motion.skeleton().clone(),
            layout: source.motion.layout().clone(),
            fps: source.motion.fps(),
            train_data: self.data.clone(),
            trainer: Some(self.state()),
        }
    }
}

/// The motion being learned together with its normalization statistics.
#[derive(Clone, Debug)]
pub struct TrainingSource {
    pub motion: MotionSequence,
    pub normalizer: Normalizer,
}

impl TrainingSource {
    pub fn new(motion: MotionSequence) -> Self {
        let normalizer = Normalizer::fit(motion.dynamics());
        Self { motion, normalizer }
    }

    pub fn normalized(&self) -> Result<Tensor<f32>> {
        let d = self.normalizer.normalize(self.motion.dynamics())?;
        let (n, f) = d.dim();
        Tensor::new(&[n, f], d.iter().map(|&v| v as f32).collect())
    }
}

/// Normalizes `motion`, trains for `config.num_steps` and returns the final
/// checkpoint and loss report.
pub fn train(
    motion: &MotionSequence,
    model_config: DenoiserConfig,
    config: TrainConfig,
    observer: impl FnMut(&Trainer, &StepOutcome) -> Result<()>,
) -> Result<(Checkpoint, TrainReport)> {
    if model_config.features != motion.features() {
        return Err(Error::Config(format!(
            "model expects {} features, motion has {}",
            model_config.features,
            motion.features()
        )));
    }
    let source = TrainingSource::new(motion.clone());
    let mut trainer = Trainer::new(model_config, source.normalized()?, config)?;
    trainer.run(observer)?;
    Ok((trainer.checkpoint(&source), trainer.report.clone()))
}

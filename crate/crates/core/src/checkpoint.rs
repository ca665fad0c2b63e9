//! Self-describing model container.
//!
//! Layout: the 8-byte magic `SINMOTN\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! tensor as little-endian `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::motion::{FeatureLayout, MotionSequence, Normalizer, Skeleton};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"SINMOTN\0";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer and RNG position needed to continue training bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub step: usize,
    pub consecutive_nonfinite: usize,
    pub rng_word_pos: u128,
    pub adam_steps: u64,
    pub adam_m: Vec<Tensor<f32>>,
    pub adam_v: Vec<Tensor<f32>>,
}

/// A trained (or training) model with everything needed to sample motions
/// in the units of the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Denoiser<f32>,
    pub train: TrainConfig,
    pub normalizer: Normalizer,
    pub skeleton: Skeleton,
    pub layout: FeatureLayout,
    pub fps: f64,
    /// The normalized training motion, `N×F`.
    pub train_data: Tensor<f32>,
    pub trainer: Option<TrainerState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TrainerHeader {
    step: usize,
    consecutive_nonfinite: usize,
    /// Decimal string: JSON numbers cannot hold a `u128` exactly.
    rng_word_pos: String,
    adam_steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: DenoiserConfig,
    train: TrainConfig,
    normalizer: Normalizer,
    skeleton: Skeleton,
    layout: FeatureLayout,
    fps: f64,
    train_frames: usize,
    parameter_count: usize,
    trainer: Option<TrainerHeader>,
    tensors: Vec<TensorEntry>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn train_frames(&self) -> usize {
        self.train_data.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.layout.features
    }

    /// The training motion in its original units.
    pub fn training_motion(&self) -> Result<MotionSequence> {
        self.to_motion(&self.train_data)
    }

    /// Normalizes a motion with the training statistics.
    pub fn normalize(&self, motion: &MotionSequence) -> Result<Tensor<f32>> {
        if motion.layout() != &self.layout {
            return Err(Error::shape(format!(
                "motion layout ({} features) differs from the model's ({} features)",
                motion.features(),
                self.layout.features
            )));
        }
        let d = self.normalizer.normalize(motion.dynamics())?;
        let (n, f) = d.dim();
        Tensor::new(&[n, f], d.iter().map(|&v| v as f32).collect())
    }

    /// Denormalizes network-space features into a motion; contact channels
    /// are clamped to [0, 1].
    pub fn to_motion(&self, x: &Tensor<f32>) -> Result<MotionSequence> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.layout.features {
            return Err(Error::shape(format!("expected N×{}, got {s:?}", self.layout.features)));
        }
        let d = Array2::from_shape_vec((s[0], s[1]), x.data().iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::shape(e.to_string()))?;
        let d = self.normalizer.denormalize(&d)?;
        MotionSequence::from_generated(d, self.layout.clone(), self.skeleton.clone(), self.fps)
    }

    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = self.model.params().iter().map(|(k, v)| (k.clone(), v)).collect();
        out.push(("data.train".into(), &self.train_data));
        if let Some(st) = &self.trainer {
            let names: Vec<&String> = self.model.params().keys().collect();
            for (k, m) in st.adam_m.iter().enumerate() {
                out.push((format!("adam.m.{}", names[k]), m));
            }
            for (k, v) in st.adam_v.iter().enumerate() {
                out.push((format!("adam.v.{}", names[k]), v));
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let tensors = self.tensors();
        let header = Header {
            model: self.model.config().clone(),
            train: self.train.clone(),
            normalizer: self.normalizer.clone(),
            skeleton: self.skeleton.clone(),
            layout: self.layout.clone(),
            fps: self.fps,
            train_frames: self.train_frames(),
            parameter_count: self.model.parameter_count(),
            trainer: self.trainer.as_ref().map(|s| TrainerHeader {
                step: s.step,
                consecutive_nonfinite: s.consecutive_nonfinite,
                rng_word_pos: s.rng_word_pos.to_string(),
                adam_steps: s.adam_steps,
            }),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(json.len() + 20);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::io("checkpoint stream", e))
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("checkpoint stream", e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(ckpt_err("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ckpt_err(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(ckpt_err("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut data = &body[hlen..];
        let mut tensors = IndexMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if data.len() < 4 * n {
                return Err(ckpt_err(format!("truncated data for tensor '{}'", e.name)));
            }
            let vals = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[4 * n..];
            if tensors.insert(e.name.clone(), Tensor::new(&e.shape, vals)?).is_some() {
                return Err(ckpt_err(format!("duplicate tensor '{}'", e.name)));
            }
        }
        if !data.is_empty() {
            return Err(ckpt_err(format!("{} trailing bytes after tensor data", data.len())));
        }
        let mut take = |name: &str| {
            tensors
                .swap_remove(name)
                .ok_or_else(|| ckpt_err(format!("missing tensor '{name}'")))
        };
        let train_data = take("data.train")?;
        let names: Vec<String> = crate::denoiser::param_specs(&header.model)
            .into_iter()
            .map(|s| s.name)
            .collect();
        let trainer = match &header.trainer {
            None => None,
            Some(h) => {
                let adam_m = names
                    .iter()
                    .map(|n| take(&format!("adam.m.{n}")))
                    .collect::<Result<_>>()?;
                let adam_v = names
                    .iter()
                    .map(|n| take(&format!("adam.v.{n}")))
                    .collect::<Result<_>>()?;
                Some(TrainerState {
                    step: h.step,
                    consecutive_nonfinite: h.consecutive_nonfinite,
                    rng_word_pos: h.rng_word_pos.parse().map_err(|_| ckpt_err("bad rng_word_pos"))?,
                    adam_steps: h.adam_steps,
                    adam_m,
                    adam_v,
                })
            }
        };
        let model = Denoiser::from_params(header.model, tensors)?;
        if header.layout.features != model.config().features {
            return Err(ckpt_err(format!(
                "layout has {} features but the model expects {}",
                header.layout.features,
                model.config().features
            )));
        }
        if header.normalizer.mean.len() != header.layout.features
            || header.normalizer.std.len() != header.layout.features
        {
            return Err(ckpt_err("normalizer width differs from the layout"));
        }
        if train_data.shape() != [header.train_frames, header.layout.features] {
            return Err(ckpt_err(format!("training data has shape {:?}", train_data.shape())));
        }
        header.train.validate()?;
        Ok(Self {
            model,
            train: header.train,
            normalizer: header.normalizer,
            skeleton: header.skeleton,
            layout: header.layout,
            fps: header.fps,
            train_data,
            trainer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Drops optimizer state, leaving an inference-only checkpoint.
    pub fn without_trainer(mut self) -> Self {
        self.trainer = None;
        self
    }
}

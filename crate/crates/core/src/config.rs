//! Flat `key = value` run configuration shared by every command.
//!
//! Keys use the hyperparameter-table names verbatim. Files may contain
//! blank lines and `#` comments; unknown keys are rejected. `auto` (or
//! `none`) clears an optional value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::applications::{DEFAULT_FILTER_FACTOR, DEFAULT_RAMP};
use crate::denoiser::{DenoiserConfig, PaddingMode};
use crate::diffusion::{PosteriorVariance, SamplerConfig, ScheduleKind};
use crate::error::{Error, Result};
use crate::metrics::{EvalConfig, WindowSpec, DEFAULT_STRIDE, DEFAULT_WINDOW_LEN};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub num_channels: usize,
    pub channel_mult: usize,
    pub num_res_blocks: usize,
    pub kernel_size: usize,
    pub use_scale_shift_norm: bool,
    pub head_dim: usize,
    pub num_heads: usize,
    pub depth: usize,
    pub qna_window: usize,
    pub norm_groups: usize,
    pub dropout: f64,
    pub padding_mode: PaddingMode,
    pub diffusion_steps: usize,
    pub noise_schedule: ScheduleKind,
    pub posterior_variance: PosteriorVariance,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_gamma: f64,
    pub num_steps: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Contact velocity threshold in skeleton units per frame.
    pub contact_threshold: Option<f64>,
    pub ramp_frames: usize,
    pub filter_factor: usize,
    pub window_len: usize,
    pub stride: usize,
    pub tau: Option<f64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = DenoiserConfig::standard(1);
        let t = TrainConfig::default();
        Self {
            num_channels: m.num_channels,
            channel_mult: m.channel_mult,
            num_res_blocks: m.num_res_blocks,
            kernel_size: m.kernel_size,
            use_scale_shift_norm: m.use_scale_shift_norm,
            head_dim: m.head_dim,
            num_heads: m.num_heads,
            depth: m.depth,
            qna_window: m.qna_window,
            norm_groups: m.norm_groups,
            dropout: m.dropout,
            padding_mode: m.padding_mode,
            diffusion_steps: t.diffusion_steps,
            noise_schedule: t.noise_schedule,
            posterior_variance: PosteriorVariance::default(),
            batch_size: t.batch_size,
            lr: t.lr,
            lr_gamma: t.lr_gamma,
            num_steps: t.num_steps,
            warmup_steps: t.warmup_steps,
            weight_decay: t.weight_decay,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
            contact_threshold: None,
            ramp_frames: DEFAULT_RAMP,
            filter_factor: DEFAULT_FILTER_FACTOR,
            window_len: DEFAULT_WINDOW_LEN,
            stride: DEFAULT_STRIDE,
            tau: None,
            seed: t.seed,
        }
    }
}

fn parse_value(key: &str, raw: &str, current: &Value) -> Result<Value> {
    let bad = || Error::Config(format!("invalid value '{raw}' for {key}"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(match raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.to_string()),
        // Optional numbers.
        Value::Null => match raw.to_ascii_lowercase().as_str() {
            "auto" | "none" => Value::Null,
            _ => {
                let v: f64 = raw.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
            }
        },
        _ => return Err(bad()),
    })
}

impl RunConfig {
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(RunConfig::default()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => unreachable!("RunConfig serializes to an object"),
        }
    }

    /// Applies `(key, value)` overrides in order.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let Value::Object(mut map) = serde_json::to_value(self)? else {
            unreachable!("RunConfig serializes to an object")
        };
        let defaults = match serde_json::to_value(RunConfig::default())? {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        for (key, raw) in pairs {
            let template = defaults
                .get(key)
                .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
            // Optional fields keep their numeric type once set.
            let template = if template.is_null() { &Value::Null } else { template };
            map.insert(key.to_string(), parse_value(key, raw.trim(), template)?);
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the `key = value` lines of `text` on top of `self`.
    pub fn with_text(&self, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", k + 1)))?;
            pairs.push((key.trim(), value.trim()));
        }
        self.with_overrides(pairs)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::default().with_text(text)
    }

    pub fn with_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.with_text(&text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::default().with_file(path)
    }

    /// Every key with its resolved value, one per line, sorted by key.
    pub fn to_text(&self) -> String {
        let Ok(Value::Object(map)) = serde_json::to_value(self) else {
            unreachable!("RunConfig serializes to an object")
        };
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let v = match &map[k] {
                Value::Null => "auto".to_string(),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.window().validate()?;
        if self.filter_factor == 0 {
            return Err(Error::Config("filter_factor must be at least 1".into()));
        }
        if let Some(t) = self.tau {
            if t.is_nan() || t < 0.0 {
                return Err(Error::Config(format!("tau must be nonnegative, got {t}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, features: usize) -> Result<DenoiserConfig> {
        let cfg = DenoiserConfig {
            features,
            num_channels: self.num_channels,
            channel_mult: self.channel_mult,
            num_res_blocks: self.num_res_blocks,
            kernel_size: self.kernel_size,
            depth: self.depth,
            qna_window: self.qna_window,
            num_heads: self.num_heads,
            head_dim: self.head_dim,
            dropout: self.dropout,
            use_scale_shift_norm: self.use_scale_shift_norm,
            padding_mode: self.padding_mode,
            norm_groups: self.norm_groups,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            num_steps: self.num_steps,
            lr: self.lr,
            lr_gamma: self.lr_gamma,
            warmup_steps: self.warmup_steps,
            weight_decay: self.weight_decay,
            seed: self.seed,
            diffusion_steps: self.diffusion_steps,
            noise_schedule: self.noise_schedule,
            checkpoint_every: self.checkpoint_every,
            log_every: self.log_every,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            variance: self.posterior_variance,
        }
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            window_len: self.window_len,
            stride: self.stride,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            window: self.window(),
            tau: self.tau,
        }
    }

    /// The scaled-down configuration used by the smoke tests: 32 channels,
    /// 100 diffusion steps, 2000 iterations.
    pub fn smoke() -> Self {
        Self {
            num_channels: 32,
            head_dim: 8,
            dropout: 0.0,
            diffusion_steps: 100,
            batch_size: 8,
            lr: 5e-4,
            num_steps: 2000,
            ..Self::default()
        }
    }
}

/// Keys fixed by a trained checkpoint.
pub const CHECKPOINT_KEYS: &[&str] = &[
    "num_channels",
    "channel_mult",
    "num_res_blocks",
    "kernel_size",
    "use_scale_shift_norm",
    "head_dim",
    "num_heads",
    "depth",
    "qna_window",
    "norm_groups",
    "dropout",
    "padding_mode",
    "diffusion_steps",
    "noise_schedule",
    "batch_size",
    "lr",
    "lr_gamma",
    "warmup_steps",
    "weight_decay",
];

impl RunConfig {
    /// Copies the model and training settings of a checkpoint into `self`.
    pub fn adopt(&self, model: &DenoiserConfig, train: &TrainConfig) -> Self {
        Self {
            num_channels: model.num_channels,
            channel_mult: model.channel_mult,
            num_res_blocks: model.num_res_blocks,
            kernel_size: model.kernel_size,
            use_scale_shift_norm: model.use_scale_shift_norm,
            head_dim: model.head_dim,
            num_heads: model.num_heads,
            depth: model.depth,
            qna_window: model.qna_window,
            norm_groups: model.norm_groups,
            dropout: model.dropout,
            padding_mode: model.padding_mode,
            diffusion_steps: train.diffusion_steps,
            noise_schedule: train.noise_schedule,
            batch_size: train.batch_size,
            lr: train.lr,
            lr_gamma: train.lr_gamma,
            num_steps: train.num_steps,
            warmup_steps: train.warmup_steps,
            weight_decay: train.weight_decay,
            log_every: train.log_every,
            checkpoint_every: train.checkpoint_every,
            ..self.clone()
        }
    }

    /// Errors if any of `keys` differs between `self` and `other`.
    pub fn ensure_same(&self, other: &Self, keys: &[&str]) -> Result<()> {
        let (Value::Object(a), Value::Object(b)) = (serde_json::to_value(self)?, serde_json::to_value(other)?) else {
            unreachable!("RunConfig serializes to an object")
        };
        for k in keys {
            if a.get(*k) != b.get(*k) {
                return Err(Error::Config(format!(
                    "{k} is fixed by the checkpoint ({}); got {}",
                    b[*k], a[*k]
                )));
            }
        }
        Ok(())
    }
}

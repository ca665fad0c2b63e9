use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    #[default]
    Zeros,
}

/// Architecture of the UNet denoiser. Field names match the run config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Per-frame feature count `F` of the motion.
    pub features: usize,
    pub num_channels: usize,
    /// Width multiplier applied once per level below the first.
    pub channel_mult: usize,
    pub num_res_blocks: usize,
    pub kernel_size: usize,
    /// UNet levels; there are `depth − 1` poolings.
    pub depth: usize,
    pub qna_window: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub dropout: f64,
    pub use_scale_shift_norm: bool,
    pub padding_mode: PaddingMode,
    pub norm_groups: usize,
}

impl DenoiserConfig {
    pub fn standard(features: usize) -> Self {
        Self {
            features,
            num_channels: 256,
            channel_mult: 1,
            num_res_blocks: 1,
            kernel_size: 3,
            depth: 1,
            qna_window: 31,
            num_heads: 4,
            head_dim: 32,
            dropout: 0.5,
            use_scale_shift_norm: true,
            padding_mode: PaddingMode::Zeros,
            norm_groups: 8,
        }
    }

    /// Width of level `l`.
    pub fn width(&self, level: usize) -> usize {
        self.num_channels * self.channel_mult.pow(level as u32)
    }

    pub fn emb_dim(&self) -> usize {
        4 * self.num_channels
    }

    pub fn attn_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.features == 0 {
            return bad("features must be positive".into());
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.num_res_blocks == 0 {
            return bad("num_res_blocks must be at least 1".into());
        }
        if self.channel_mult == 0 {
            return bad("channel_mult must be at least 1".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.qna_window.is_multiple_of(2) {
            return bad(format!("qna_window must be odd, got {}", self.qna_window));
        }
        if self.num_heads == 0 || self.head_dim == 0 {
            return bad("num_heads and head_dim must be positive".into());
        }
        if self.num_channels == 0 || !self.num_channels.is_multiple_of(self.attn_dim()) {
            return bad(format!(
                "num_channels {} is not a multiple of num_heads·head_dim = {}",
                self.num_channels,
                self.attn_dim()
            ));
        }
        if !self.num_channels.is_multiple_of(2) {
            return bad("num_channels must be even for the sinusoidal embedding".into());
        }
        for l in 0..self.depth {
            if self.norm_groups == 0 || !self.width(l).is_multiple_of(self.norm_groups) {
                return bad(format!(
                    "level {l} width {} is not divisible into {} norm groups",
                    self.width(l),
                    self.norm_groups
                ));
            }
            // Groups are normalized per frame; a single channel always maps to 0.
            if self.width(l) / self.norm_groups < 2 {
                return bad(format!(
                    "level {l} width {} leaves fewer than 2 channels per norm group ({} groups)",
                    self.width(l),
                    self.norm_groups
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Sequence lengths must survive `depth − 1` poolings, be at least
    /// `2^depth`, and leave the coarsest level at least half a QnA window.
    pub fn check_frames(&self, n: usize) -> Result<()> {
        let factor = 1usize << (self.depth - 1);
        let min = self.min_frames();
        if n < min || !n.is_multiple_of(factor) {
            return Err(Error::shape(format!(
                "{n} frames: depth {} needs a multiple of {factor} and at least {min}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn min_frames(&self) -> usize {
        let factor = 1usize << (self.depth - 1);
        (1usize << self.depth).max(self.qna_window.div_ceil(2) * factor)
    }
}

//! The x0-predicting network: a shallow temporal UNet whose attention layers
//! use one learned query per head over local windows.
//!
//! Nothing in the network depends on absolute frame index, so it accepts any
//! sequence length that survives its poolings, and each output frame only
//! sees [`receptive_field`] input frames.

pub mod config;
pub mod receptive_field;
pub mod unet;

pub use config::{DenoiserConfig, PaddingMode};
pub use receptive_field::{input_span, receptive_field};
pub use unet::{param_specs, timestep_embedding, Bound, Denoiser, ParamSpec, Predictor};

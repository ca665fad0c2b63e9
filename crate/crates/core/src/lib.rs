//! Learn the motion motifs of a single skeletal animation with a diffusion
//! model whose denoiser sees only a narrow temporal window, then synthesize
//! and edit variations of it.

pub mod applications;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

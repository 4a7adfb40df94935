//! Voice conversion laboratory: a speaker-conditioned VAE over mel-cepstra,
//! a conditional WaveNet vocoder, and the tooling to fine-tune the vocoder
//! on VAE-reconstructed features and measure the resulting feature
//! mismatch.
//!
//! Module map:
//!
//! - [`diffcore`]: reverse-mode autodiff, Adam, gradient checks, checkpoints.
//! - [`dsp`]: analysis/synthesis chain, mel-cepstra, mu-law, WAV and feature files.
//! - [`vae`]: the conversion model (reconstruct / convert forward modes).
//! - [`wavenet`]: the autoregressive vocoder.
//! - [`pipeline`]: speaker profiles, post-filters, adaptation sets, the seven
//!   compared systems and the synthetic corpus.
//! - [`analysis`]: MCD, DTW, distance and GV reports.
//! - [`experiment`]: configuration and stage orchestration used by the CLI.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! name the concrete instantiations used in practice.

pub mod analysis;
pub mod diffcore;
pub mod dsp;
mod error;
pub mod experiment;
pub mod pipeline;
pub mod scalar;
pub mod vae;
pub mod wavenet;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision tensor.
pub type Tensor64 = diffcore::Tensor<f64>;
/// Inference precision tensor.
pub type Tensor32 = diffcore::Tensor<f32>;
pub type Tape64 = diffcore::Tape<f64>;
pub type Vae = vae::VaeModel<f64>;
pub type WaveNet = wavenet::WaveNetModel<f64>;
/// Single-precision vocoder for faster sampling.
pub type WaveNet32 = wavenet::WaveNetModel<f32>;

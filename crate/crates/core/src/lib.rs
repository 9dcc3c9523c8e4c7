//! Band-routed EEG denoising.
//!
//! The pipeline decomposes a noisy EEG segment into frequency bands with a
//! masked DFT, denoises each band in a shared latent space with a learned
//! routing mask deciding where and how strongly to apply the refinement,
//! conditions the band pathway on full-band temporal context, and fuses
//! everything back into a clean reconstruction. The crate also ships the
//! semi-synthetic contamination pipeline, quality metrics, and a small
//! reverse-mode autodiff engine the network is built on.

pub mod data;
pub mod error;
pub mod fsio;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

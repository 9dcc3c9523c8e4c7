//! The end-to-end denoising network: full-band conditioner, band
//! adapters with routing, cross-band fusion, shared decoders and the
//! final fusion of both pathways.

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{
    routing_heatmap, BandAdapterOutput, BandRouteNet, ForwardOutput, FullbandOutputs,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::BandSpec;

/// Component toggles for ablation experiments. Each disabled component
/// satisfies an exact identity: no full-band conditioner means the FiLM
/// step is skipped and the output equals the band sum; routing forced to
/// one selects the denoiser proposal; bypassed fusion passes band
/// latents through; no band embedding skips the additive identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    #[serde(default)]
    pub no_fullband: bool,
    #[serde(default)]
    pub route_all_one: bool,
    #[serde(default)]
    pub no_cross_band: bool,
    #[serde(default)]
    pub no_band_embedding: bool,
}

/// How the routing mask is produced in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteMode {
    /// Mask predicted by the artifact router.
    Learned,
    /// Mask forced to zero: routed latent is exactly the conditioned one.
    ForceZero,
    /// Mask forced to one: routed latent is exactly the proposal.
    ForceOne,
}

fn default_channels() -> usize {
    64
}

fn default_heads() -> usize {
    4
}

fn default_stages() -> usize {
    2
}

fn default_blocks() -> usize {
    2
}

/// Hyperparameters that determine the parameter registry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden feature channels `C`.
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Attention heads in the band-mixing stage.
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_stages")]
    pub encoder_stages: usize,
    #[serde(default = "default_blocks")]
    pub blocks_per_stage: usize,
    #[serde(default = "BandSpec::default_six")]
    pub band_spec: BandSpec,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: default_channels(),
            heads: default_heads(),
            encoder_stages: default_stages(),
            blocks_per_stage: default_blocks(),
            band_spec: BandSpec::default_six(),
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and quick experiments.
    pub fn toy(channels: usize, bands: usize, segment_len: usize) -> Self {
        ModelConfig {
            channels,
            heads: 2,
            encoder_stages: 2,
            blocks_per_stage: 2,
            band_spec: BandSpec::uniform(bands, 256.0, segment_len),
            ablation: AblationFlags::default(),
        }
    }

    pub fn num_bands(&self) -> usize {
        self.band_spec.num_bands()
    }

    pub fn segment_len(&self) -> usize {
        self.band_spec.segment_len
    }

    pub fn validate(&self) -> Result<()> {
        self.band_spec.validate()?;
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(Error::Config(format!(
                "model: channels {} must be a positive multiple of 4",
                self.channels
            )));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "model: channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.encoder_stages == 0 || self.blocks_per_stage == 0 {
            return Err(Error::Config(
                "model: encoder_stages and blocks_per_stage must be positive".into(),
            ));
        }
        Ok(())
    }

    fn inception_blocks(&self) -> usize {
        self.encoder_stages * self.blocks_per_stage
    }
}

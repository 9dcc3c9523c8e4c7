//! Network assembly. The band encoder, router, denoiser and decoder are
//! single instances shared across all bands; only the band identity
//! embedding differs per band.

use crate::error::{Error, Result};
use crate::layers::{
    film_modulate, BandAttention, Conv1d, DepthwisePointwise, GruLayer, Init, LayerNorm, ParamId,
    ParamSet, ParamVars,
};
use crate::tensor::{Element, Tape, Tensor, Var};

use super::{ModelConfig, RouteMode};

/// Stack of multi-scale blocks; the first maps `cin -> C`, the rest keep `C`.
struct InceptionStack {
    blocks: Vec<crate::layers::Inception1d>,
}

impl InceptionStack {
    fn new<E: Element>(
        ps: &mut ParamSet<E>,
        name: &str,
        cin: usize,
        channels: usize,
        n_blocks: usize,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(n_blocks);
        for i in 0..n_blocks {
            let block_cin = if i == 0 { cin } else { channels };
            blocks.push(crate::layers::Inception1d::new(
                ps,
                &format!("{name}.block{i}"),
                block_cin,
                channels,
            )?);
        }
        Ok(InceptionStack { blocks })
    }

    fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let mut y = x;
        for block in &self.blocks {
            y = block.forward(t, pv, y)?;
        }
        Ok(y)
    }
}

/// Signal head: inception blocks followed by a pointwise map to 1 channel.
struct SignalDecoder {
    stack: InceptionStack,
    head: Conv1d,
}

impl SignalDecoder {
    fn new<E: Element>(
        ps: &mut ParamSet<E>,
        name: &str,
        channels: usize,
        n_blocks: usize,
    ) -> Result<Self> {
        Ok(SignalDecoder {
            stack: InceptionStack::new(ps, name, channels, channels, n_blocks)?,
            head: Conv1d::new(ps, &format!("{name}.head"), channels, 1, 1, true)?,
        })
    }

    fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let y = self.stack.forward(t, pv, x)?;
        self.head.forward(t, pv, y)
    }
}

/// Outputs of the full-band pathway.
pub struct FullbandOutputs {
    /// Global context `(B, C, T)`.
    pub context: Var,
    /// Coarse refinement signal `(B, 1, T)`.
    pub refinement: Var,
    /// Temporal gate in `(0, 1)`, `(B, 1, T)`.
    pub gate: Var,
    /// FiLM scale input `(B, C, T)`.
    pub tau: Var,
    /// FiLM shift `(B, C, T)`.
    pub psi: Var,
}

struct FullbandConditioner {
    encoder: InceptionStack,
    temporal_norm: LayerNorm,
    temporal_gru: GruLayer,
    temporal_conv: Conv1d,
    decoder: SignalDecoder,
    gate_conv_in: Conv1d,
    gate_norm: LayerNorm,
    gate_conv_out: Conv1d,
    film_proj: Conv1d,
}

impl FullbandConditioner {
    fn new<E: Element>(ps: &mut ParamSet<E>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let n = cfg.inception_blocks();
        Ok(FullbandConditioner {
            encoder: InceptionStack::new(ps, "fullband.encoder", 1, c, n)?,
            temporal_norm: LayerNorm::new(ps, "fullband.temporal.norm", c)?,
            temporal_gru: GruLayer::new(ps, "fullband.temporal.gru", c)?,
            temporal_conv: Conv1d::new(ps, "fullband.temporal.conv", c, c, 3, true)?,
            decoder: SignalDecoder::new(ps, "fullband.decoder", c, n)?,
            gate_conv_in: Conv1d::new(ps, "fullband.gate.conv_in", c, c, 3, true)?,
            gate_norm: LayerNorm::new(ps, "fullband.gate.norm", c)?,
            gate_conv_out: Conv1d::new(ps, "fullband.gate.conv_out", c, 1, 1, true)?,
            film_proj: Conv1d::new(ps, "fullband.film_proj", c, 2 * c, 1, true)?,
        })
    }

    fn forward<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        x: Var,
        channels: usize,
    ) -> Result<FullbandOutputs> {
        let encoded = self.encoder.forward(t, pv, x)?;
        // Temporal enhancement: Conv1D(GRU(Norm(.))).
        let normed = self.temporal_norm.forward(t, pv, encoded)?;
        let recur = self.temporal_gru.forward(t, pv, normed)?;
        let context = self.temporal_conv.forward(t, pv, recur)?;

        let refinement = self.decoder.forward(t, pv, context)?;

        // Gate head: Conv1D(GELU(Norm(Conv1D(.)))) then sigmoid.
        let g = self.gate_conv_in.forward(t, pv, context)?;
        let g = self.gate_norm.forward(t, pv, g)?;
        let g = t.gelu(g)?;
        let g = self.gate_conv_out.forward(t, pv, g)?;
        let gate = t.sigmoid(g)?;

        let proj = self.film_proj.forward(t, pv, context)?;
        let tau = t.slice(proj, 1, 0, channels)?;
        let psi = t.slice(proj, 1, channels, channels)?;
        Ok(FullbandOutputs {
            context,
            refinement,
            gate,
            tau,
            psi,
        })
    }
}

/// Predicts the soft routing mask from a conditioned band latent: a
/// local depthwise-pointwise branch plus a global branch (temporal
/// average pooling and two pointwise mixes), summed and squashed.
struct ArtifactRouter {
    local: DepthwisePointwise,
    global_in: Conv1d,
    global_out: Conv1d,
}

impl ArtifactRouter {
    fn new<E: Element>(ps: &mut ParamSet<E>, channels: usize) -> Result<Self> {
        Ok(ArtifactRouter {
            local: DepthwisePointwise::new(ps, "band.router.local", channels, 5)?,
            global_in: Conv1d::new(ps, "band.router.global_in", channels, channels, 1, true)?,
            global_out: Conv1d::new(ps, "band.router.global_out", channels, channels, 1, true)?,
        })
    }

    fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, e: Var) -> Result<Var> {
        let local = self.local.forward(t, pv, e)?;
        let pooled = t.mean_axis(e, 2)?;
        let g = self.global_in.forward(t, pv, pooled)?;
        let g = t.gelu(g)?;
        let g = self.global_out.forward(t, pv, g)?;
        let shape = t.value(local).shape().to_vec();
        let g = t.broadcast_to(g, &shape)?;
        let fused = t.add(local, g)?;
        t.sigmoid(fused)
    }
}

/// Produces the refinement proposal: pre-convolution, GRU temporal
/// layer and post-convolution in a residual frame.
struct BandDenoiser {
    pre: Conv1d,
    pre_norm: LayerNorm,
    gru: GruLayer,
    post: Conv1d,
}

impl BandDenoiser {
    fn new<E: Element>(ps: &mut ParamSet<E>, channels: usize) -> Result<Self> {
        Ok(BandDenoiser {
            pre: Conv1d::new(ps, "band.denoiser.pre", channels, channels, 3, true)?,
            pre_norm: LayerNorm::new(ps, "band.denoiser.norm", channels)?,
            gru: GruLayer::new(ps, "band.denoiser.gru", channels)?,
            post: Conv1d::new(ps, "band.denoiser.post", channels, channels, 3, true)?,
        })
    }

    fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, e: Var) -> Result<Var> {
        let h = self.pre.forward(t, pv, e)?;
        let h = self.pre_norm.forward(t, pv, h)?;
        let h = t.gelu(h)?;
        let h = self.gru.forward(t, pv, h)?;
        let h = self.post.forward(t, pv, h)?;
        t.add(e, h)
    }
}

/// Temporal mixing within each band followed by attention across bands.
struct CrossBandFusion {
    temporal: DepthwisePointwise,
    attention: BandAttention,
}

impl CrossBandFusion {
    fn new<E: Element>(ps: &mut ParamSet<E>, channels: usize, heads: usize) -> Result<Self> {
        Ok(CrossBandFusion {
            temporal: DepthwisePointwise::new(ps, "fusion.temporal", channels, 5)?,
            attention: BandAttention::new(ps, "fusion.attn", channels, heads)?,
        })
    }

    /// `stacked` is `(B*K, C, T)` with bands contiguous per batch entry.
    fn forward<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        stacked: Var,
        bsz: usize,
        k: usize,
    ) -> Result<Var> {
        let mixed = self.temporal.forward(t, pv, stacked)?;
        let mixed = t.add(stacked, mixed)?;
        self.attention.forward(t, pv, mixed, bsz, k)
    }
}

/// Intermediate latents of one band adapter application.
pub struct BandAdapterOutput {
    /// Encoded latent plus band embedding, after FiLM when enabled.
    pub conditioned: Var,
    /// Denoiser proposal.
    pub proposal: Var,
    /// Routing mask, present only in learned mode.
    pub gate: Option<Var>,
    /// Routed latent.
    pub routed: Var,
}

/// Everything a forward pass produces, for fusion checks, diagnostics
/// and visualization.
pub struct ForwardOutput {
    /// Final reconstruction `(B, 1, T)`.
    pub y_hat: Var,
    /// Decoded per-band signals.
    pub band_signals: Vec<Var>,
    /// Sum of the decoded bands.
    pub band_sum: Var,
    /// Temporal gate, absent when the full-band pathway is disabled.
    pub gate: Option<Var>,
    /// Coarse refinement signal, absent without the full-band pathway.
    pub refinement: Option<Var>,
    /// `gate .* refinement`, the term added to the band sum.
    pub gated_refinement: Option<Var>,
    /// Per-band adapter latents.
    pub adapters: Vec<BandAdapterOutput>,
}

/// The assembled network. Construction registers all parameters in a
/// deterministic order; the weights live in the returned [`ParamSet`].
pub struct BandRouteNet {
    cfg: ModelConfig,
    fullband: FullbandConditioner,
    band_embed: ParamId,
    band_encoder: InceptionStack,
    router: ArtifactRouter,
    denoiser: BandDenoiser,
    fusion: CrossBandFusion,
    band_decoder: SignalDecoder,
}

impl BandRouteNet {
    pub fn new<E: Element>(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamSet<E>)> {
        cfg.validate()?;
        let mut ps = ParamSet::new(seed);
        let c = cfg.channels;
        let k = cfg.num_bands();
        let n = cfg.inception_blocks();
        let fullband = FullbandConditioner::new(&mut ps, &cfg)?;
        let band_embed = ps.register("band.embed", &[k, c, 1], Init::Zeros)?;
        let band_encoder = InceptionStack::new(&mut ps, "band.encoder", 1, c, n)?;
        let router = ArtifactRouter::new(&mut ps, c)?;
        let denoiser = BandDenoiser::new(&mut ps, c)?;
        let fusion = CrossBandFusion::new(&mut ps, c, cfg.heads)?;
        let band_decoder = SignalDecoder::new(&mut ps, "band.decoder", c, n)?;
        Ok((
            BandRouteNet {
                cfg,
                fullband,
                band_embed,
                band_encoder,
                router,
                denoiser,
                fusion,
                band_decoder,
            },
            ps,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn route_mode(&self) -> RouteMode {
        if self.cfg.ablation.route_all_one {
            RouteMode::ForceOne
        } else {
            RouteMode::Learned
        }
    }

    /// Full-band conditioning of the raw input `(B, 1, T)`.
    pub fn fullband_condition<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        x: Var,
    ) -> Result<FullbandOutputs> {
        self.fullband.forward(t, pv, x, self.cfg.channels)
    }

    /// One band adapter application: shared encoder, band embedding,
    /// FiLM conditioning, router/denoiser and the routing combination.
    pub fn band_adapter<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        x_band: Var,
        band: usize,
        film: Option<(Var, Var)>,
        mode: RouteMode,
    ) -> Result<BandAdapterOutput> {
        if band >= self.cfg.num_bands() {
            return Err(Error::Config(format!(
                "band_adapter: band index {band} out of range (K = {})",
                self.cfg.num_bands()
            )));
        }
        let encoded = self.band_encoder.forward(t, pv, x_band)?;
        let with_identity = if self.cfg.ablation.no_band_embedding {
            encoded
        } else {
            let embed = t.slice(pv.get(self.band_embed), 0, band, 1)?;
            let shape = t.value(encoded).shape().to_vec();
            let embed = t.broadcast_to(embed, &shape)?;
            t.add(encoded, embed)?
        };
        let conditioned = match film {
            Some((tau, psi)) => film_modulate(t, with_identity, tau, psi)?,
            None => with_identity,
        };
        let proposal = self.denoiser.forward(t, pv, conditioned)?;
        let (gate, routed) = match mode {
            RouteMode::ForceZero => (None, conditioned),
            RouteMode::ForceOne => (None, proposal),
            RouteMode::Learned => {
                let g = self.router.forward(t, pv, conditioned)?;
                let keep = t.mul_scalar(g, -1.0)?;
                let keep = t.add_scalar(keep, 1.0)?;
                let kept = t.mul(keep, conditioned)?;
                let replaced = t.mul(g, proposal)?;
                (Some(g), t.add(kept, replaced)?)
            }
        };
        Ok(BandAdapterOutput {
            conditioned,
            proposal,
            gate,
            routed,
        })
    }

    /// End-to-end forward with the configured ablation toggles.
    ///
    /// `x` is the standardized input `(B, 1, T)` and `bands` its
    /// decomposition, one `(B, 1, T)` signal per band.
    pub fn forward<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        x: Var,
        bands: &[Var],
    ) -> Result<ForwardOutput> {
        self.forward_routed(t, pv, x, bands, self.route_mode())
    }

    /// Forward with an explicit routing mode (diagnostics and tests).
    pub fn forward_routed<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        x: Var,
        bands: &[Var],
        mode: RouteMode,
    ) -> Result<ForwardOutput> {
        let k = self.cfg.num_bands();
        if bands.len() != k {
            return Err(Error::Shape(format!(
                "forward: got {} band signals, expected {}",
                bands.len(),
                k
            )));
        }
        let x_shape = t.value(x).shape().to_vec();
        if x_shape.len() != 3 || x_shape[1] != 1 || x_shape[2] != self.cfg.segment_len() {
            return Err(Error::Shape(format!(
                "forward: input must be (B, 1, {}), got {:?}",
                self.cfg.segment_len(),
                x_shape
            )));
        }
        let bsz = x_shape[0];
        let t_len = x_shape[2];
        let c = self.cfg.channels;

        let fullband = if self.cfg.ablation.no_fullband {
            None
        } else {
            Some(self.fullband.forward(t, pv, x, c)?)
        };
        let film = fullband.as_ref().map(|fb| (fb.tau, fb.psi));

        let mut adapters = Vec::with_capacity(k);
        for (band, &x_band) in bands.iter().enumerate() {
            adapters.push(self.band_adapter(t, pv, x_band, band, film, mode)?);
        }

        let routed: Vec<Var> = adapters.iter().map(|a| a.routed).collect();
        let fused: Vec<Var> = if self.cfg.ablation.no_cross_band {
            routed
        } else {
            let mut parts = Vec::with_capacity(k);
            for &z in &routed {
                parts.push(t.reshape(z, &[bsz, 1, c, t_len])?);
            }
            let stacked = t.concat(&parts, 1)?;
            let stacked = t.reshape(stacked, &[bsz * k, c, t_len])?;
            let mixed = self.fusion.forward(t, pv, stacked, bsz, k)?;
            let mixed = t.reshape(mixed, &[bsz, k, c, t_len])?;
            let mut out = Vec::with_capacity(k);
            for band in 0..k {
                let piece = t.slice(mixed, 1, band, 1)?;
                out.push(t.reshape(piece, &[bsz, c, t_len])?);
            }
            out
        };

        let mut band_signals = Vec::with_capacity(k);
        for &z in &fused {
            band_signals.push(self.band_decoder.forward(t, pv, z)?);
        }
        let mut band_sum = band_signals[0];
        for &y in &band_signals[1..] {
            band_sum = t.add(band_sum, y)?;
        }

        let (y_hat, gate, refinement, gated_refinement) = match &fullband {
            None => (band_sum, None, None, None),
            Some(fb) => {
                let gated = t.mul(fb.gate, fb.refinement)?;
                let y = t.add(band_sum, gated)?;
                (y, Some(fb.gate), Some(fb.refinement), Some(gated))
            }
        };

        Ok(ForwardOutput {
            y_hat,
            band_signals,
            band_sum,
            gate,
            refinement,
            gated_refinement,
            adapters,
        })
    }

    /// Routing masks materialized as tensors, honoring forced modes:
    /// all-ones when routing is ablated away, the learned mask otherwise.
    pub fn gate_maps<E: Element>(
        &self,
        t: &Tape<E>,
        out: &ForwardOutput,
    ) -> Vec<Tensor<E>> {
        out.adapters
            .iter()
            .map(|a| match a.gate {
                Some(g) => t.value(g).clone(),
                None => {
                    let shape = t.value(a.conditioned).shape().to_vec();
                    if self.cfg.ablation.route_all_one {
                        Tensor::ones(&shape)
                    } else {
                        Tensor::zeros(&shape)
                    }
                }
            })
            .collect()
    }
}

/// Per-band channel means of the routing masks for one batch entry:
/// a `K x T` matrix in `[0, 1]`.
pub fn routing_heatmap<E: Element>(gates: &[Tensor<E>], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(gates.len());
    for g in gates {
        let s = g.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!(
                "routing_heatmap: gate must be (B, C, T), got {s:?}"
            )));
        }
        let (bsz, c, t_len) = (s[0], s[1], s[2]);
        if batch >= bsz {
            return Err(Error::Shape(format!(
                "routing_heatmap: batch index {batch} out of range ({bsz})"
            )));
        }
        let data = g.data();
        let mut row = vec![0.0f64; t_len];
        for ch in 0..c {
            let base = (batch * c + ch) * t_len;
            for (tt, r) in row.iter_mut().enumerate() {
                *r += data[base + tt].as_f64();
            }
        }
        for r in &mut row {
            *r /= c as f64;
        }
        rows.push(row);
    }
    Ok(rows)
}

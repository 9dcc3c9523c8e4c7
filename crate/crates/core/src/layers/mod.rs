//! Reusable neural blocks composed from tensor primitives.
//!
//! Layers own [`ParamId`]s into a [`ParamSet`]; a forward pass binds the
//! whole set onto a tape once ([`bind_params`]) and layers index into the
//! resulting [`ParamVars`]. All blocks preserve the temporal length.

mod params;
#[cfg(test)]
mod tests;

pub use params::{bind_params, collect_grads, GradMap, Init, ParamId, ParamSet, ParamVars};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Var};

/// Epsilon inside the layer-norm square root. Small enough that the
/// normalized variance stays within 1e-6 of one on ordinary inputs.
pub const LAYER_NORM_EPS: f64 = 1e-8;

/// 1D convolution, zero "same" padding, stride 1, optional bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = ps.register(
            &format!("{name}.w"),
            &[cout, cin, kernel],
            Init::Uniform { fan_in: cin * kernel },
        )?;
        let bias = if bias {
            Some(ps.register(&format!("{name}.b"), &[1, cout, 1], Init::Zeros)?)
        } else {
            None
        };
        Ok(Conv1d {
            weight,
            bias,
            kernel,
        })
    }

    pub fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let mut y = t.conv1d(x, pv.get(self.weight), self.kernel)?;
        if let Some(b) = self.bias {
            let shape = t.value(y).shape().to_vec();
            let bb = t.broadcast_to(pv.get(b), &shape)?;
            y = t.add(y, bb)?;
        }
        Ok(y)
    }
}

/// Per-channel 1D convolution, zero "same" padding, optional bias.
#[derive(Clone, Debug)]
pub struct DepthwiseConv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
}

impl DepthwiseConv1d {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        name: &str,
        channels: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = ps.register(
            &format!("{name}.w"),
            &[channels, kernel],
            Init::Uniform { fan_in: kernel },
        )?;
        let bias = if bias {
            Some(ps.register(&format!("{name}.b"), &[1, channels, 1], Init::Zeros)?)
        } else {
            None
        };
        Ok(DepthwiseConv1d {
            weight,
            bias,
            kernel,
        })
    }

    pub fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let mut y = t.depthwise_conv1d(x, pv.get(self.weight), self.kernel)?;
        if let Some(b) = self.bias {
            let shape = t.value(y).shape().to_vec();
            let bb = t.broadcast_to(pv.get(b), &shape)?;
            y = t.add(y, bb)?;
        }
        Ok(y)
    }
}

/// Layer normalization over the channel axis at each time step, with a
/// learned per-channel affine.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<E: Element>(ps: &mut ParamSet<E>, name: &str, channels: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: ps.register(&format!("{name}.gamma"), &[1, channels, 1], Init::Ones)?,
            beta: ps.register(&format!("{name}.beta"), &[1, channels, 1], Init::Zeros)?,
        })
    }

    pub fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let normed = t.layer_norm(x, LAYER_NORM_EPS)?;
        let shape = t.value(normed).shape().to_vec();
        let g = t.broadcast_to(pv.get(self.gamma), &shape)?;
        let b = t.broadcast_to(pv.get(self.beta), &shape)?;
        let scaled = t.mul(normed, g)?;
        t.add(scaled, b)
    }
}

/// Four-branch multi-scale 1D block: pointwise, 3-tap and 5-tap
/// convolutions behind pointwise reductions, and an average-pool branch,
/// each producing `cout/4` channels. The concatenated branches pass
/// through GELU, with a residual connection when shapes match.
#[derive(Clone, Debug)]
pub struct Inception1d {
    pub cin: usize,
    pub cout: usize,
    branch_pw: Conv1d,
    branch3_reduce: Conv1d,
    branch3: Conv1d,
    branch5_reduce: Conv1d,
    branch5: Conv1d,
    branch_pool: Conv1d,
}

impl Inception1d {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        if cout % 4 != 0 {
            return Err(Error::Config(format!(
                "inception1d '{name}': output channels {cout} must be divisible by 4"
            )));
        }
        let q = cout / 4;
        Ok(Inception1d {
            cin,
            cout,
            branch_pw: Conv1d::new(ps, &format!("{name}.pw"), cin, q, 1, true)?,
            branch3_reduce: Conv1d::new(ps, &format!("{name}.k3r"), cin, q, 1, true)?,
            branch3: Conv1d::new(ps, &format!("{name}.k3"), q, q, 3, true)?,
            branch5_reduce: Conv1d::new(ps, &format!("{name}.k5r"), cin, q, 1, true)?,
            branch5: Conv1d::new(ps, &format!("{name}.k5"), q, q, 5, true)?,
            branch_pool: Conv1d::new(ps, &format!("{name}.pool"), cin, q, 1, true)?,
        })
    }

    pub fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let y1 = self.branch_pw.forward(t, pv, x)?;
        let r3 = self.branch3_reduce.forward(t, pv, x)?;
        let y3 = self.branch3.forward(t, pv, r3)?;
        let r5 = self.branch5_reduce.forward(t, pv, x)?;
        let y5 = self.branch5.forward(t, pv, r5)?;
        let pooled = t.avg_pool1d(x, 3)?;
        let y4 = self.branch_pool.forward(t, pv, pooled)?;
        let cat = t.concat(&[y1, y3, y5, y4], 1)?;
        let act = t.gelu(cat)?;
        if self.cin == self.cout {
            t.add(act, x)
        } else {
            Ok(act)
        }
    }
}

/// Unidirectional single-layer GRU over `(B, C, T)`, hidden size `C`,
/// zero initial state.
///
/// Per step, with input pre-activations `(gz, gr, gn)` from a pointwise
/// projection of `x_t` and recurrent contributions `(hz, hr, hn) = h U`:
///
/// ```text
/// z = sigmoid(gz + hz)        update gate
/// r = sigmoid(gr + hr)        reset gate
/// n = tanh(gn + r * hn)       candidate
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub input_proj: ParamId,
    pub input_bias: ParamId,
    pub recurrent: ParamId,
}

impl GruLayer {
    pub fn new<E: Element>(ps: &mut ParamSet<E>, name: &str, channels: usize) -> Result<Self> {
        Ok(GruLayer {
            input_proj: ps.register(
                &format!("{name}.w_in"),
                &[3 * channels, channels, 1],
                Init::Uniform { fan_in: channels },
            )?,
            input_bias: ps.register(&format!("{name}.b_in"), &[1, 3 * channels, 1], Init::Zeros)?,
            recurrent: ps.register(
                &format!("{name}.u"),
                &[channels, 3 * channels],
                Init::Uniform { fan_in: channels },
            )?,
        })
    }

    pub fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let gates = t.conv1d(x, pv.get(self.input_proj), 1)?;
        let shape = t.value(gates).shape().to_vec();
        let bias = t.broadcast_to(pv.get(self.input_bias), &shape)?;
        let gates = t.add(gates, bias)?;
        t.gru_seq(gates, pv.get(self.recurrent))
    }
}

/// Feature-wise linear modulation: `u .* (1 + tanh(tau)) + psi`.
pub fn film_modulate<E: Element>(
    t: &mut Tape<E>,
    u: Var,
    tau: Var,
    psi: Var,
) -> Result<Var> {
    let gain = t.tanh(tau)?;
    let gain = t.add_scalar(gain, 1.0)?;
    let scaled = t.mul(u, gain)?;
    t.add(scaled, psi)
}

/// Depthwise convolution followed by a pointwise channel mix.
#[derive(Clone, Debug)]
pub struct DepthwisePointwise {
    pub depthwise: DepthwiseConv1d,
    pub pointwise: Conv1d,
}

impl DepthwisePointwise {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        name: &str,
        channels: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(DepthwisePointwise {
            depthwise: DepthwiseConv1d::new(ps, &format!("{name}.dw"), channels, kernel, true)?,
            pointwise: Conv1d::new(ps, &format!("{name}.pw"), channels, channels, 1, true)?,
        })
    }

    pub fn forward<E: Element>(&self, t: &mut Tape<E>, pv: &ParamVars, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(t, pv, x)?;
        self.pointwise.forward(t, pv, y)
    }
}

/// Multi-head self-attention across the `K` band tokens at each time
/// step, followed by a position-wise feed-forward, both in pre-norm
/// residual form.
#[derive(Clone, Debug)]
pub struct BandAttention {
    pub channels: usize,
    pub heads: usize,
    norm_attn: LayerNorm,
    wq: Conv1d,
    wk: Conv1d,
    wv: Conv1d,
    wo: Conv1d,
    norm_ff: LayerNorm,
    ff_expand: Conv1d,
    ff_project: Conv1d,
}

/// Attention output plus the softmax weights (for inspection).
pub struct AttentionProbe {
    pub output: Var,
    /// Shape `(B*heads*T, K, K)`; rows sum to one.
    pub weights: Var,
}

impl BandAttention {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        name: &str,
        channels: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "band attention '{name}': channels {channels} not divisible by heads {heads}"
            )));
        }
        Ok(BandAttention {
            channels,
            heads,
            norm_attn: LayerNorm::new(ps, &format!("{name}.norm_attn"), channels)?,
            wq: Conv1d::new(ps, &format!("{name}.wq"), channels, channels, 1, true)?,
            wk: Conv1d::new(ps, &format!("{name}.wk"), channels, channels, 1, true)?,
            wv: Conv1d::new(ps, &format!("{name}.wv"), channels, channels, 1, true)?,
            wo: Conv1d::new(ps, &format!("{name}.wo"), channels, channels, 1, true)?,
            norm_ff: LayerNorm::new(ps, &format!("{name}.norm_ff"), channels)?,
            ff_expand: Conv1d::new(ps, &format!("{name}.ff1"), channels, 2 * channels, 1, true)?,
            ff_project: Conv1d::new(ps, &format!("{name}.ff2"), 2 * channels, channels, 1, true)?,
        })
    }

    /// `(B*K, C, T)` view of head-split tokens rearranged so the band
    /// axis is the attention axis: `(B*H*T, K, d_h)`.
    fn to_tokens<E: Element>(
        &self,
        t: &mut Tape<E>,
        x: Var,
        bsz: usize,
        k: usize,
    ) -> Result<Var> {
        let dh = self.channels / self.heads;
        let t_len = t.value(x).shape()[2];
        let split = t.reshape(x, &[bsz, k, self.heads, dh, t_len])?;
        let moved = t.permute(split, &[0, 2, 4, 1, 3])?; // (B, H, T, K, dh)
        t.reshape(moved, &[bsz * self.heads * t_len, k, dh])
    }

    /// Scaled dot-product attention over bands; returns the projected
    /// output (no residual) and the attention weights.
    pub fn attention<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        x: Var,
        bsz: usize,
        k: usize,
    ) -> Result<AttentionProbe> {
        let dh = self.channels / self.heads;
        let t_len = t.value(x).shape()[2];
        let normed = self.norm_attn.forward(t, pv, x)?;
        let q = self.wq.forward(t, pv, normed)?;
        let key = self.wk.forward(t, pv, normed)?;
        let v = self.wv.forward(t, pv, normed)?;
        let q = self.to_tokens(t, q, bsz, k)?;
        let v = self.to_tokens(t, v, bsz, k)?;
        // Keys transposed: (B*H*T, dh, K).
        let key = t.reshape(key, &[bsz, k, self.heads, dh, t_len])?;
        let key = t.permute(key, &[0, 2, 4, 3, 1])?;
        let key = t.reshape(key, &[bsz * self.heads * t_len, dh, k])?;
        let scores = t.batch_matmul(q, key)?;
        let scores = t.mul_scalar(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = t.softmax(scores, 2)?;
        let mixed = t.batch_matmul(weights, v)?; // (B*H*T, K, dh)
        let mixed = t.reshape(mixed, &[bsz, self.heads, t_len, k, dh])?;
        let mixed = t.permute(mixed, &[0, 3, 1, 4, 2])?; // (B, K, H, dh, T)
        let mixed = t.reshape(mixed, &[bsz * k, self.channels, t_len])?;
        let output = self.wo.forward(t, pv, mixed)?;
        Ok(AttentionProbe { output, weights })
    }

    /// Full block: attention and feed-forward, each behind a pre-norm
    /// residual. `x` is `(B*K, C, T)`.
    pub fn forward<E: Element>(
        &self,
        t: &mut Tape<E>,
        pv: &ParamVars,
        x: Var,
        bsz: usize,
        k: usize,
    ) -> Result<Var> {
        let probe = self.attention(t, pv, x, bsz, k)?;
        let after_attn = t.add(x, probe.output)?;
        let normed = self.norm_ff.forward(t, pv, after_attn)?;
        let h = self.ff_expand.forward(t, pv, normed)?;
        let h = t.gelu(h)?;
        let h = self.ff_project.forward(t, pv, h)?;
        t.add(after_attn, h)
    }
}

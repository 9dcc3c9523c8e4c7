//! Surrogate signal generators: desk-scale stand-ins for benchmark
//! recordings, with the spectral profiles the pipeline cares about.
//!
//! Clean segments are 1/f-shaped noise band-limited to the EEG range
//! with a randomized alpha-band bump. EOG-like artifacts are smooth
//! low-frequency transients; EMG-like artifacts are high-frequency
//! noise bursts. Everything is unit-RMS and fully determined by the
//! seed (one derived stream per sample, so generation order does not
//! matter).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{idft, Spectrum};

fn default_count() -> usize {
    200
}

fn default_segment_len() -> usize {
    512
}

fn default_sample_rate() -> f64 {
    256.0
}

fn default_clean_lo() -> f64 {
    0.5
}

fn default_clean_hi() -> f64 {
    80.0
}

fn default_eog_hi() -> f64 {
    4.5
}

fn default_emg_lo() -> f64 {
    20.0
}

/// Counts, seed and spectral shaping limits for surrogate generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub clean_count: usize,
    #[serde(default = "default_count")]
    pub eog_count: usize,
    #[serde(default = "default_count")]
    pub emg_count: usize,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    /// Clean passband lower edge.
    #[serde(default = "default_clean_lo")]
    pub clean_lo_hz: f64,
    /// Clean passband upper edge.
    #[serde(default = "default_clean_hi")]
    pub clean_hi_hz: f64,
    /// EOG spectral content stays below this frequency.
    #[serde(default = "default_eog_hi")]
    pub eog_hi_hz: f64,
    /// EMG spectral content starts at this frequency.
    #[serde(default = "default_emg_lo")]
    pub emg_lo_hz: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            seed: 0,
            clean_count: default_count(),
            eog_count: default_count(),
            emg_count: default_count(),
            segment_len: default_segment_len(),
            sample_rate_hz: default_sample_rate(),
            clean_lo_hz: default_clean_lo(),
            clean_hi_hz: default_clean_hi(),
            eog_hi_hz: default_eog_hi(),
            emg_lo_hz: default_emg_lo(),
        }
    }
}

impl SurrogateConfig {
    fn validate(&self) -> Result<()> {
        if self.segment_len < 8 {
            return Err(Error::Config(format!(
                "surrogate: segment length {} too short",
                self.segment_len
            )));
        }
        if self.clean_count == 0 && self.eog_count == 0 && self.emg_count == 0 {
            return Err(Error::Config("surrogate: all counts are zero".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config("surrogate: bad sample rate".into()));
        }
        Ok(())
    }
}

/// Generated clean and artifact sets.
pub struct SurrogateSets {
    pub clean: Vec<Vec<f64>>,
    pub eog: Vec<Vec<f64>>,
    pub emg: Vec<Vec<f64>>,
}

const STREAM_CLEAN: u64 = 1 << 32;
const STREAM_EOG: u64 = 2 << 32;
const STREAM_EMG: u64 = 3 << 32;

/// Generates the three unit-RMS signal sets for `cfg`.
pub fn synth_surrogate(cfg: &SurrogateConfig) -> Result<SurrogateSets> {
    cfg.validate()?;
    let clean = (0..cfg.clean_count)
        .map(|i| gen_clean(cfg, stream_rng(cfg.seed, STREAM_CLEAN | i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let eog = (0..cfg.eog_count)
        .map(|i| gen_eog(cfg, stream_rng(cfg.seed, STREAM_EOG | i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let emg = (0..cfg.emg_count)
        .map(|i| gen_emg(cfg, stream_rng(cfg.seed, STREAM_EMG | i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateSets { clean, eog, emg })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random-phase signal with spectral amplitude `shape(freq_hz)`.
fn spectral_noise(
    t_len: usize,
    fs: f64,
    rng: &mut ChaCha8Rng,
    shape: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut bins = vec![Complex64::new(0.0, 0.0); t_len];
    let half = t_len / 2;
    for f in 1..=half {
        let freq = f as f64 * fs / t_len as f64;
        let amp = shape(freq);
        if amp == 0.0 {
            continue;
        }
        // Rayleigh-ish magnitude jitter keeps realizations diverse.
        let mag = amp * (0.25 + rng.gen::<f64>());
        let phase = rng.gen::<f64>() * 2.0 * PI;
        if t_len % 2 == 0 && f == half {
            bins[f] = Complex64::new(mag * phase.cos(), 0.0);
        } else {
            bins[f] = Complex64::from_polar(mag, phase);
            bins[t_len - f] = bins[f].conj();
        }
    }
    idft(&Spectrum { bins }).iter().map(|v| v.re).collect()
}

fn normalize_rms(x: &mut [f64]) {
    let power: f64 = x.iter().map(|&v| v * v).sum::<f64>() / x.len() as f64;
    let r = power.sqrt();
    if r > 0.0 {
        for v in x.iter_mut() {
            *v /= r;
        }
    }
}

/// Smooth envelope: a floor plus raised-cosine bursts.
fn burst_envelope(
    t_len: usize,
    fs: f64,
    rng: &mut ChaCha8Rng,
    n_bursts: usize,
    width_s: (f64, f64),
    floor: f64,
) -> Vec<f64> {
    let mut env = vec![floor; t_len];
    for _ in 0..n_bursts {
        let width = (rng.gen_range(width_s.0..width_s.1) * fs) as usize;
        let width = width.clamp(4, t_len);
        let center = rng.gen_range(0..t_len);
        let amp = rng.gen_range(0.6..1.2);
        let start = center.saturating_sub(width / 2);
        for (j, e) in env[start..(start + width).min(t_len)].iter_mut().enumerate() {
            let phase = PI * (j as f64 / width as f64 * 2.0 - 1.0);
            *e += amp * 0.5 * (1.0 + phase.cos());
        }
    }
    env
}

fn gen_clean(cfg: &SurrogateConfig, mut rng: ChaCha8Rng) -> Result<Vec<f64>> {
    let (lo, hi) = (cfg.clean_lo_hz, cfg.clean_hi_hz.min(cfg.sample_rate_hz / 2.0));
    let bump_center = rng.gen_range(9.0..11.0);
    let bump_gain = rng.gen_range(1.0..3.0);
    let mut x = spectral_noise(cfg.segment_len, cfg.sample_rate_hz, &mut rng, |f| {
        if f < lo || f > hi {
            return 0.0;
        }
        let pink = 1.0 / f.sqrt();
        let bump = bump_gain * (-(f - bump_center) * (f - bump_center) / 2.0).exp();
        pink * (1.0 + bump)
    });
    normalize_rms(&mut x);
    Ok(x)
}

fn gen_eog(cfg: &SurrogateConfig, mut rng: ChaCha8Rng) -> Result<Vec<f64>> {
    let hi = cfg.eog_hi_hz;
    let base = spectral_noise(cfg.segment_len, cfg.sample_rate_hz, &mut rng, |f| {
        if f < 0.2 || f > hi {
            0.0
        } else {
            1.0 / f
        }
    });
    let n_bursts = rng.gen_range(1..4);
    let env = burst_envelope(
        cfg.segment_len,
        cfg.sample_rate_hz,
        &mut rng,
        n_bursts,
        (0.4, 1.2),
        0.08,
    );
    let mut x: Vec<f64> = base.iter().zip(&env).map(|(&v, &e)| v * e).collect();
    normalize_rms(&mut x);
    Ok(x)
}

fn gen_emg(cfg: &SurrogateConfig, mut rng: ChaCha8Rng) -> Result<Vec<f64>> {
    let lo = cfg.emg_lo_hz;
    let hi = cfg.sample_rate_hz / 2.0;
    let base = spectral_noise(cfg.segment_len, cfg.sample_rate_hz, &mut rng, |f| {
        if f < lo || f > hi {
            0.0
        } else {
            1.0
        }
    });
    let n_bursts = rng.gen_range(2..5);
    let env = burst_envelope(
        cfg.segment_len,
        cfg.sample_rate_hz,
        &mut rng,
        n_bursts,
        (0.15, 0.5),
        0.15,
    );
    let mut x: Vec<f64> = base.iter().zip(&env).map(|(&v, &e)| v * e).collect();
    normalize_rms(&mut x);
    Ok(x)
}

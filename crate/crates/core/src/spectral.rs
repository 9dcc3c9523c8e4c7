//! DFT-based band decomposition and power-spectral-density estimation.
//!
//! A signal of length `T` is transformed with a radix-2 FFT (naive
//! summation for non-power-of-two lengths), split into `K` frequency
//! bands through symmetric binary bin masks, and reconstructed per band
//! with the inverse transform. The masks partition every bin, so the
//! band signals sum back to the input exactly (up to rounding).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One frequency band: `[lo_hz, hi_hz)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub fn new(name: &str, lo_hz: f64, hi_hz: f64) -> Self {
        Band {
            name: name.into(),
            lo_hz,
            hi_hz,
        }
    }
}

/// The band layout governing decomposition and reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub sample_rate_hz: f64,
    pub segment_len: usize,
    pub bands: Vec<Band>,
}

impl BandSpec {
    /// The default six-band layout at 256 Hz / 512 samples. The beta
    /// band starts at 12 Hz so the masks tile the spectrum with no gap.
    pub fn default_six() -> Self {
        BandSpec {
            sample_rate_hz: 256.0,
            segment_len: 512,
            bands: vec![
                Band::new("delta", 0.0, 4.0),
                Band::new("theta", 4.0, 8.0),
                Band::new("alpha", 8.0, 12.0),
                Band::new("beta", 12.0, 30.0),
                Band::new("gamma", 30.0, 80.0),
                Band::new("epsilon", 80.0, 128.0),
            ],
        }
    }

    /// Evenly named `k`-band layout tiling `(0, fs/2]`, for small test
    /// configurations.
    pub fn uniform(k: usize, sample_rate_hz: f64, segment_len: usize) -> Self {
        let step = sample_rate_hz / 2.0 / k as f64;
        let bands = (0..k)
            .map(|i| Band::new(&format!("band{i}"), i as f64 * step, (i + 1) as f64 * step))
            .collect();
        BandSpec {
            sample_rate_hz,
            segment_len,
            bands,
        }
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn band_names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Config("band spec: at least one band required".into()));
        }
        if self.segment_len < 2 {
            return Err(Error::Config(format!(
                "band spec: segment length {} must be >= 2",
                self.segment_len
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config("band spec: sample rate must be positive".into()));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        let mut prev_hi = 0.0;
        for (i, band) in self.bands.iter().enumerate() {
            if !(band.lo_hz < band.hi_hz) {
                return Err(Error::Config(format!(
                    "band spec: band '{}' has lo {} >= hi {}",
                    band.name, band.lo_hz, band.hi_hz
                )));
            }
            if (band.lo_hz - prev_hi).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "band spec: bands do not tile the half-spectrum; band {} ('{}') starts at {} Hz, expected {} Hz",
                    i, band.name, band.lo_hz, prev_hi
                )));
            }
            prev_hi = band.hi_hz;
        }
        if prev_hi < nyquist - 1e-12 {
            return Err(Error::Config(format!(
                "band spec: bands end at {prev_hi} Hz, below the Nyquist frequency {nyquist} Hz"
            )));
        }
        Ok(())
    }

    /// Binary masks over the `T` DFT bins, one per band. Each mask is
    /// conjugate-symmetric so the masked inverse transforms are real;
    /// the DC bin goes to the lowest band and the Nyquist bin to the
    /// highest. Together the masks select every bin exactly once.
    pub fn build_masks(&self) -> Result<Vec<Vec<bool>>> {
        self.validate()?;
        let t = self.segment_len;
        let k = self.bands.len();
        let mut masks = vec![vec![false; t]; k];
        let half = t / 2;
        for f in 0..=half {
            let band = if f == 0 {
                0
            } else if t % 2 == 0 && f == half {
                k - 1
            } else {
                let freq = f as f64 * self.sample_rate_hz / t as f64;
                match self
                    .bands
                    .iter()
                    .position(|b| b.lo_hz <= freq && freq < b.hi_hz)
                {
                    Some(i) => i,
                    None => {
                        return Err(Error::Config(format!(
                            "band spec: bin {f} ({freq} Hz) not covered by any band"
                        )))
                    }
                }
            };
            masks[band][f] = true;
            if f > 0 && f != t - f {
                masks[band][t - f] = true;
            }
        }
        Ok(masks)
    }
}

/// Complex DFT coefficients of a real signal.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2usize;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64);
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

fn dft_naive(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    (0..n)
        .map(|f| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = sign * 2.0 * PI * (f * t % n) as f64 / n as f64;
                acc += v * Complex64::from_polar(1.0, ang);
            }
            acc * scale
        })
        .collect()
}

fn transform(mut buf: Vec<Complex64>, inverse: bool) -> Vec<Complex64> {
    if buf.len().is_power_of_two() {
        fft_in_place(&mut buf, inverse);
        buf
    } else {
        dft_naive(&buf, inverse)
    }
}

/// Forward DFT of a real signal: `x_hat[f] = sum_t x[t] e^(-j 2 pi f t / T)`.
pub fn dft(x: &[f64]) -> Result<Spectrum> {
    if x.len() < 2 {
        return Err(Error::Config(format!(
            "dft: signal length {} must be >= 2",
            x.len()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("dft: non-finite input sample".into()));
    }
    let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Ok(Spectrum {
        bins: transform(buf, false),
    })
}

/// Inverse DFT, returning complex samples (callers check realness).
pub fn idft(spectrum: &Spectrum) -> Vec<Complex64> {
    transform(spectrum.bins.clone(), true)
}

/// Splits `x` into one real signal per band: `x_k = IDFT(M_k .* x_hat)`.
///
/// Errors with a mask-symmetry fault if any band signal has imaginary
/// residue above `1e-9 * max(1, max|x|)` before the residue is discarded.
pub fn band_decompose(x: &[f64], spec: &BandSpec) -> Result<Vec<Vec<f64>>> {
    if x.len() != spec.segment_len {
        return Err(Error::Shape(format!(
            "band_decompose: signal length {} != segment length {}",
            x.len(),
            spec.segment_len
        )));
    }
    let masks = spec.build_masks()?;
    let spectrum = dft(x)?;
    let scale = x.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let tolerance = 1e-9 * scale;
    let mut rows = Vec::with_capacity(masks.len());
    for (k, mask) in masks.iter().enumerate() {
        let masked = Spectrum {
            bins: spectrum
                .bins
                .iter()
                .zip(mask)
                .map(|(&b, &keep)| if keep { b } else { Complex64::new(0.0, 0.0) })
                .collect(),
        };
        let complex_row = idft(&masked);
        let residue = complex_row.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
        if residue > tolerance {
            return Err(Error::Numeric(format!(
                "band_decompose: mask-symmetry fault in band {k}; imaginary residue {residue:.3e}"
            )));
        }
        rows.push(complex_row.iter().map(|v| v.re).collect());
    }
    Ok(rows)
}

/// Welch estimator settings: Hann window, mean averaging, one-sided.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub sample_rate_hz: f64,
    pub segment_len: usize,
    /// Fraction of a segment shared with the next one.
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            sample_rate_hz: 256.0,
            segment_len: 256,
            overlap: 0.5,
        }
    }
}

impl WelchConfig {
    pub fn with_segment(sample_rate_hz: f64, segment_len: usize) -> Self {
        WelchConfig {
            sample_rate_hz,
            segment_len,
            overlap: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.segment_len < 2 {
            return Err(Error::Config(format!(
                "welch: segment length {} must be >= 2",
                self.segment_len
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "welch: overlap {} must lie in [0, 1)",
                self.overlap
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config("welch: sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// One-sided power spectral density estimate.
#[derive(Clone, Debug)]
pub struct PsdEstimate {
    pub freqs_hz: Vec<f64>,
    pub density: Vec<f64>,
    pub config: WelchConfig,
    pub segments: usize,
}

#[cfg(test)]
mod tests;

/// Welch PSD: Hann-windowed segments with the configured overlap,
/// periodogram per segment, mean across segments.
pub fn psd(x: &[f64], config: &WelchConfig) -> Result<PsdEstimate> {
    config.validate()?;
    let seg = config.segment_len;
    if x.len() < seg {
        return Err(Error::Config(format!(
            "psd: signal length {} shorter than one segment ({seg})",
            x.len()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("psd: non-finite input sample".into()));
    }
    let step = ((seg as f64) * (1.0 - config.overlap)).round().max(1.0) as usize;
    let n_segments = (x.len() - seg) / step + 1;
    let window: Vec<f64> = (0..seg)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / seg as f64).cos()))
        .collect();
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let scale = 1.0 / (config.sample_rate_hz * win_power);
    let n_bins = seg / 2 + 1;
    let mut density = vec![0.0f64; n_bins];
    for s in 0..n_segments {
        let chunk = &x[s * step..s * step + seg];
        let windowed: Vec<f64> = chunk.iter().zip(&window).map(|(&v, &w)| v * w).collect();
        let spectrum = dft(&windowed)?;
        for (f, d) in density.iter_mut().enumerate() {
            let mut p = spectrum.bins[f].norm_sqr() * scale;
            let is_edge = f == 0 || (seg % 2 == 0 && f == seg / 2);
            if !is_edge {
                p *= 2.0;
            }
            *d += p;
        }
    }
    for d in &mut density {
        *d /= n_segments as f64;
    }
    let freqs_hz = (0..n_bins)
        .map(|f| f as f64 * config.sample_rate_hz / seg as f64)
        .collect();
    Ok(PsdEstimate {
        freqs_hz,
        density,
        config: config.clone(),
        segments: n_segments,
    })
}

//! Signal-quality metrics and their per-SNR-level aggregation.
//!
//! Two distinct SNR conventions coexist in the pipeline and are never
//! interchanged: dataset construction scales artifacts by an
//! amplitude-ratio SNR (`10 log10` of an RMS ratio, see
//! [`crate::data::solve_lambda`]), while the improvement metric here
//! compares mean residual powers.

use std::io::Write;

use crate::error::{Error, Result};
use crate::spectral::{psd, WelchConfig};

/// Root mean square: `sqrt(mean(g^2))`.
pub fn rms(g: &[f64]) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::Data("rms: empty signal".into()));
    }
    Ok((g.iter().map(|&v| v * v).sum::<f64>() / g.len() as f64).sqrt())
}

fn check_same_len(yhat: &[f64], y: &[f64], what: &str) -> Result<()> {
    if yhat.len() != y.len() {
        return Err(Error::Shape(format!(
            "{what}: lengths {} and {} differ",
            yhat.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Waveform-level relative error: `RMS(yhat - y) / RMS(y)` against the
/// clean reference `y`.
pub fn rrmse_t(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_same_len(yhat, y, "rrmse_t")?;
    let denom = rms(y)?;
    if denom == 0.0 {
        return Err(Error::Data("rrmse_t: zero-RMS reference".into()));
    }
    let diff: Vec<f64> = yhat.iter().zip(y).map(|(&a, &b)| a - b).collect();
    Ok(rms(&diff)? / denom)
}

/// Spectral relative error: `RMS(S(yhat) - S(y)) / RMS(S(y))` on Welch
/// power spectral densities.
pub fn rrmse_s(yhat: &[f64], y: &[f64], welch: &WelchConfig) -> Result<f64> {
    check_same_len(yhat, y, "rrmse_s")?;
    let s_hat = psd(yhat, welch)?;
    let s_ref = psd(y, welch)?;
    let denom = rms(&s_ref.density)?;
    if denom == 0.0 {
        return Err(Error::Data("rrmse_s: zero reference PSD".into()));
    }
    let diff: Vec<f64> = s_hat
        .density
        .iter()
        .zip(&s_ref.density)
        .map(|(&a, &b)| a - b)
        .collect();
    Ok(rms(&diff)? / denom)
}

/// Pearson correlation coefficient between the two signals.
pub fn cc(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_same_len(yhat, y, "cc")?;
    if y.is_empty() {
        return Err(Error::Data("cc: empty signal".into()));
    }
    let n = y.len() as f64;
    let mean_hat = yhat.iter().sum::<f64>() / n;
    let mean_ref = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_hat = 0.0;
    let mut var_ref = 0.0;
    for (&a, &b) in yhat.iter().zip(y) {
        let da = a - mean_hat;
        let db = b - mean_ref;
        cov += da * db;
        var_hat += da * da;
        var_ref += db * db;
    }
    if var_hat == 0.0 || var_ref == 0.0 {
        return Err(Error::Data("cc: constant signal has no correlation".into()));
    }
    Ok(cov / (var_hat.sqrt() * var_ref.sqrt()))
}

fn mean_power(g: &[f64]) -> f64 {
    g.iter().map(|&v| v * v).sum::<f64>() / g.len() as f64
}

/// SNR improvement in dB: output SNR minus input SNR, both via mean
/// residual power against the clean reference `x`.
pub fn snr_imp(x: &[f64], y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_same_len(y, x, "snr_imp")?;
    check_same_len(yhat, x, "snr_imp")?;
    if x.is_empty() {
        return Err(Error::Data("snr_imp: empty signal".into()));
    }
    let p_in: f64 = mean_power(&y.iter().zip(x).map(|(&a, &b)| a - b).collect::<Vec<_>>());
    let p_out: f64 = mean_power(&yhat.iter().zip(x).map(|(&a, &b)| a - b).collect::<Vec<_>>());
    if p_in == 0.0 {
        return Err(Error::Data(
            "snr_imp: noisy input equals the clean reference".into(),
        ));
    }
    if p_out == 0.0 {
        return Err(Error::Numeric(
            "snr_imp: infinite output SNR (prediction equals reference exactly)".into(),
        ));
    }
    Ok(10.0 * (p_in / p_out).log10())
}

/// Metrics of one evaluated sample.
#[derive(Clone, Debug)]
pub struct SampleMetrics {
    pub sample_id: usize,
    pub snr_db: f64,
    pub rrmse_t: f64,
    pub rrmse_s: f64,
    pub cc: f64,
    pub snr_imp: f64,
}

impl SampleMetrics {
    /// Computes all four metrics for one `(clean, noisy, denoised)` triple.
    pub fn compute(
        sample_id: usize,
        snr_db: f64,
        clean: &[f64],
        noisy: &[f64],
        denoised: &[f64],
        welch: &WelchConfig,
    ) -> Result<Self> {
        Ok(SampleMetrics {
            sample_id,
            snr_db,
            rrmse_t: rrmse_t(denoised, clean)?,
            rrmse_s: rrmse_s(denoised, clean, welch)?,
            cc: cc(denoised, clean)?,
            snr_imp: snr_imp(clean, noisy, denoised)?,
        })
    }
}

/// Mean metrics over a group of samples.
#[derive(Clone, Debug, Default)]
pub struct MetricSummary {
    pub count: usize,
    pub rrmse_t: f64,
    pub rrmse_s: f64,
    pub cc: f64,
    pub snr_imp: f64,
}

impl MetricSummary {
    fn of(samples: &[&SampleMetrics]) -> Self {
        let n = samples.len() as f64;
        MetricSummary {
            count: samples.len(),
            rrmse_t: samples.iter().map(|s| s.rrmse_t).sum::<f64>() / n,
            rrmse_s: samples.iter().map(|s| s.rrmse_s).sum::<f64>() / n,
            cc: samples.iter().map(|s| s.cc).sum::<f64>() / n,
            snr_imp: samples.iter().map(|s| s.snr_imp).sum::<f64>() / n,
        }
    }
}

/// Per-sample metrics with per-level and overall means.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    /// `(snr_db, summary)` per distinct level, ascending.
    pub levels: Vec<(f64, MetricSummary)>,
    pub overall: MetricSummary,
}

/// Groups samples by SNR level and computes the means.
pub fn aggregate(samples: Vec<SampleMetrics>) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("aggregate: no samples".into()));
    }
    let mut level_values: Vec<f64> = samples.iter().map(|s| s.snr_db).collect();
    level_values.sort_by(|a, b| a.partial_cmp(b).expect("snr levels must be comparable"));
    level_values.dedup();
    let levels = level_values
        .into_iter()
        .map(|level| {
            let group: Vec<&SampleMetrics> =
                samples.iter().filter(|s| s.snr_db == level).collect();
            (level, MetricSummary::of(&group))
        })
        .collect();
    let overall = MetricSummary::of(&samples.iter().collect::<Vec<_>>());
    Ok(MetricReport {
        samples,
        levels,
        overall,
    })
}

impl MetricReport {
    /// CSV schema: `sample_id,snr_db,rrmse_t,rrmse_s,cc,snr_imp`, one
    /// row per sample, then one `level` row per SNR level and a final
    /// `overall` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sample_id,snr_db,rrmse_t,rrmse_s,cc,snr_imp")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{:.8},{:.8},{:.8},{:.8}",
                s.sample_id, s.snr_db, s.rrmse_t, s.rrmse_s, s.cc, s.snr_imp
            )?;
        }
        for (level, m) in &self.levels {
            writeln!(
                w,
                "level,{},{:.8},{:.8},{:.8},{:.8}",
                level, m.rrmse_t, m.rrmse_s, m.cc, m.snr_imp
            )?;
        }
        writeln!(
            w,
            "overall,,{:.8},{:.8},{:.8},{:.8}",
            self.overall.rrmse_t, self.overall.rrmse_s, self.overall.cc, self.overall.snr_imp
        )?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

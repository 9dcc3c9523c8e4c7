//! Semi-synthetic contamination pipeline: artifact scaling to target
//! SNR levels, standardization, SNR-grid augmentation, dataset splits,
//! surrogate signal generation and dataset file I/O.

mod io;
mod surrogate;

pub use io::{read_dataset, read_flat_f32, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use surrogate::{synth_surrogate, SurrogateConfig, SurrogateSets};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rms;

/// Which artifact class contaminated a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Eog,
    Emg,
    Mixed,
}

impl ArtifactKind {
    pub fn code(self) -> u8 {
        match self {
            ArtifactKind::Eog => 0,
            ArtifactKind::Emg => 1,
            ArtifactKind::Mixed => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ArtifactKind::Eog),
            1 => Ok(ArtifactKind::Emg),
            2 => Ok(ArtifactKind::Mixed),
            other => Err(Error::Data(format!("unknown artifact kind code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Eog => "eog",
            ArtifactKind::Emg => "emg",
            ArtifactKind::Mixed => "mixed",
        }
    }
}

/// One dataset record: a clean segment, its contaminated version and
/// the SNR level the contamination was scaled to.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalPair {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub snr_db: f64,
    pub kind: ArtifactKind,
}

/// Noise scale for a target SNR: the contamination model is
/// `y = x + lambda * n` with `SNR = 10 log10(RMS(x) / RMS(lambda n))`,
/// an amplitude-ratio convention, so
/// `lambda = RMS(x) / (RMS(n) * 10^(SNR/10))`.
pub fn solve_lambda(clean: &[f64], artifact: &[f64], snr_db: f64) -> Result<f64> {
    let rms_x = rms(clean)?;
    let rms_n = rms(artifact)?;
    if rms_n == 0.0 {
        return Err(Error::Data(
            "solve_lambda: degenerate artifact with zero RMS".into(),
        ));
    }
    Ok(rms_x / (rms_n * 10f64.powf(snr_db / 10.0)))
}

/// Contaminates `clean` at `snr_db`. With both artifact classes present
/// each is scaled independently to the target level and the scaled sum
/// is added; the record is tagged accordingly.
pub fn contaminate(
    clean: &[f64],
    eog: Option<&[f64]>,
    emg: Option<&[f64]>,
    snr_db: f64,
) -> Result<SignalPair> {
    let kind = match (eog, emg) {
        (Some(_), Some(_)) => ArtifactKind::Mixed,
        (Some(_), None) => ArtifactKind::Eog,
        (None, Some(_)) => ArtifactKind::Emg,
        (None, None) => {
            return Err(Error::Data(
                "contaminate: at least one artifact signal required".into(),
            ))
        }
    };
    let mut noisy = clean.to_vec();
    for artifact in [eog, emg].into_iter().flatten() {
        if artifact.len() != clean.len() {
            return Err(Error::Shape(format!(
                "contaminate: artifact length {} != clean length {}",
                artifact.len(),
                clean.len()
            )));
        }
        let lambda = solve_lambda(clean, artifact, snr_db)?;
        for (y, &n) in noisy.iter_mut().zip(artifact) {
            *y += lambda * n;
        }
    }
    Ok(SignalPair {
        clean: clean.to_vec(),
        noisy,
        snr_db,
        kind,
    })
}

/// Scales both signals by the standard deviation of the noisy one:
/// `x / sigma_y` and `y / sigma_y` (population estimator).
pub fn standardize(pair: &SignalPair) -> Result<SignalPair> {
    let n = pair.noisy.len() as f64;
    let mean = pair.noisy.iter().sum::<f64>() / n;
    let var = pair.noisy.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::Data(
            "standardize: degenerate segment with zero noisy std".into(),
        ));
    }
    Ok(SignalPair {
        clean: pair.clean.iter().map(|&v| v / sigma).collect(),
        noisy: pair.noisy.iter().map(|&v| v / sigma).collect(),
        snr_db: pair.snr_db,
        kind: pair.kind,
    })
}

/// The benchmark SNR grid: integer levels from -7 dB to 2 dB.
pub fn default_snr_grid() -> Vec<f64> {
    (-7..=2).map(|v| v as f64).collect()
}

/// Instantiates every clean/artifact pairing at every grid level.
///
/// Pairing policy per artifact class: EOG pairs clean and artifact sets
/// 1:1 (equal sizes required); EMG reuses clean segments with
/// replacement to match the artifact count; mixed aligns all sets to the
/// larger artifact count, sampling with replacement where needed.
pub fn augment_snr_grid(
    clean: &[Vec<f64>],
    eog: &[Vec<f64>],
    emg: &[Vec<f64>],
    kind: ArtifactKind,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<SignalPair>> {
    if clean.is_empty() {
        return Err(Error::Data("augment: empty clean set".into()));
    }
    if grid.is_empty() {
        return Err(Error::Data("augment: empty SNR grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xA06);
    let resample = |set: &[Vec<f64>], n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        if set.len() == n {
            set.to_vec()
        } else {
            (0..n).map(|_| set[rng.gen_range(0..set.len())].clone()).collect()
        }
    };
    let mut out = Vec::new();
    match kind {
        ArtifactKind::Eog => {
            if eog.is_empty() {
                return Err(Error::Data("augment: empty EOG set".into()));
            }
            if eog.len() != clean.len() {
                return Err(Error::Data(format!(
                    "augment: EOG pairing is 1:1 but got {} clean and {} EOG segments",
                    clean.len(),
                    eog.len()
                )));
            }
            for (x, n) in clean.iter().zip(eog) {
                for &level in grid {
                    out.push(contaminate(x, Some(n), None, level)?);
                }
            }
        }
        ArtifactKind::Emg => {
            if emg.is_empty() {
                return Err(Error::Data("augment: empty EMG set".into()));
            }
            let clean_matched = resample(clean, emg.len(), &mut rng);
            for (x, n) in clean_matched.iter().zip(emg) {
                for &level in grid {
                    out.push(contaminate(x, Some(n), None, level).map(|mut p| {
                        p.kind = ArtifactKind::Emg;
                        p
                    })?);
                }
            }
        }
        ArtifactKind::Mixed => {
            if eog.is_empty() || emg.is_empty() {
                return Err(Error::Data("augment: mixed set needs both artifact classes".into()));
            }
            let n = eog.len().max(emg.len());
            let clean_matched = resample(clean, n, &mut rng);
            let eog_matched = resample(eog, n, &mut rng);
            let emg_matched = resample(emg, n, &mut rng);
            for i in 0..n {
                for &level in grid {
                    out.push(contaminate(
                        &clean_matched[i],
                        Some(&eog_matched[i]),
                        Some(&emg_matched[i]),
                        level,
                    )?);
                }
            }
        }
    }
    Ok(out)
}

/// Train/validation/test index partition.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle then an 8:1:1 partition; validation and test sizes
/// round `n/10` to nearest, the remainder goes to train.
pub fn split(n: usize, seed: u64) -> Result<DatasetSplit> {
    if n < 10 {
        return Err(Error::Data(format!(
            "split: need at least 10 samples, got {n}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x59117);
    indices.shuffle(&mut rng);
    let tenth = (n as f64 / 10.0).round() as usize;
    let n_train = n - 2 * tenth;
    let train = indices[..n_train].to_vec();
    let val = indices[n_train..n_train + tenth].to_vec();
    let test = indices[n_train + tenth..].to_vec();
    Ok(DatasetSplit { train, val, test })
}

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Independent O(T^2) reference transform.
fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|f| {
            (0..n)
                .map(|t| {
                    let ang = -2.0 * PI * (f * t) as f64 / n as f64;
                    Complex64::new(x[t] * ang.cos(), x[t] * ang.sin())
                })
                .sum()
        })
        .collect()
}

fn random_signal(t_len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t_len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn dft_constant_signal_is_dc_only() {
    let c = 0.75;
    let x = vec![c; 64];
    let spec = dft(&x).unwrap();
    assert!((spec.bins[0].re - c * 64.0).abs() < 1e-10);
    assert!(spec.bins[0].im.abs() < 1e-10);
    for bin in &spec.bins[1..] {
        assert!(bin.norm() < 1e-10);
    }
}

#[test]
fn dft_single_bin_cosine() {
    let t_len = 128;
    let k0 = 5;
    let x: Vec<f64> = (0..t_len)
        .map(|t| (2.0 * PI * k0 as f64 * t as f64 / t_len as f64).cos())
        .collect();
    let spec = dft(&x).unwrap();
    for (f, bin) in spec.bins.iter().enumerate() {
        if f == k0 || f == t_len - k0 {
            assert!((bin.norm() - t_len as f64 / 2.0).abs() < 1e-9);
        } else {
            assert!(bin.norm() < 1e-9, "bin {f} has magnitude {}", bin.norm());
        }
    }
}

#[test]
fn fft_matches_naive_dft() {
    for (t_len, seed) in [(64usize, 1u64), (256, 2), (512, 3)] {
        let x = random_signal(t_len, seed);
        let fast = dft(&x).unwrap();
        let slow = naive_dft(&x);
        for (a, b) in fast.bins.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-9, "T={t_len}");
        }
    }
}

#[test]
fn non_power_of_two_falls_back_to_naive() {
    let x = random_signal(12, 4);
    let fast = dft(&x).unwrap();
    let slow = naive_dft(&x);
    for (a, b) in fast.bins.iter().zip(&slow) {
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn dft_rejects_bad_input() {
    assert!(dft(&[1.0]).is_err());
    assert!(dft(&[1.0, f64::NAN, 0.0]).is_err());
}

#[test]
fn dft_idft_round_trip() {
    let x = random_signal(256, 7);
    let spec = dft(&x).unwrap();
    let back = idft(&spec);
    let scale = x.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    for (orig, rec) in x.iter().zip(&back) {
        assert!((orig - rec.re).abs() <= 1e-9 * scale);
        assert!(rec.im.abs() <= 1e-9 * scale);
    }
}

#[test]
fn real_input_has_conjugate_symmetry() {
    let x = random_signal(128, 9);
    let spec = dft(&x).unwrap();
    for f in 1..128 {
        let a = spec.bins[f];
        let b = spec.bins[128 - f].conj();
        assert!((a - b).norm() < 1e-10);
    }
}

#[test]
fn default_six_band_bin_arithmetic() {
    let spec = BandSpec::default_six();
    let masks = spec.build_masks().unwrap();
    // 0.5 Hz resolution: bin 20 is 10 Hz, inside alpha (8-12) only.
    for (k, mask) in masks.iter().enumerate() {
        assert_eq!(mask[20], k == 2, "band {k}");
    }
    // Delta covers bins 0..=7 (below 4 Hz) plus mirrors 505..=511.
    let delta_bins: Vec<usize> = (0..512).filter(|&f| masks[0][f]).collect();
    let expected: Vec<usize> = (0..8).chain(505..512).collect();
    assert_eq!(delta_bins, expected);
}

#[test]
fn masks_partition_every_bin() {
    for spec in [BandSpec::default_six(), BandSpec::uniform(3, 256.0, 100)] {
        let masks = spec.build_masks().unwrap();
        for f in 0..spec.segment_len {
            let covering = masks.iter().filter(|m| m[f]).count();
            assert_eq!(covering, 1, "bin {f} covered {covering} times");
        }
    }
}

#[test]
fn nyquist_and_dc_assignment() {
    let spec = BandSpec::default_six();
    let masks = spec.build_masks().unwrap();
    assert!(masks[0][0], "DC belongs to the lowest band");
    assert!(masks[5][256], "Nyquist bin belongs to the highest band");
}

#[test]
fn gapped_bands_are_a_configuration_error() {
    let spec = BandSpec {
        sample_rate_hz: 256.0,
        segment_len: 512,
        bands: vec![Band::new("low", 0.0, 10.0), Band::new("high", 20.0, 128.0)],
    };
    assert!(matches!(spec.build_masks(), Err(crate::Error::Config(_))));
}

#[test]
fn decompose_pure_alpha_sinusoid() {
    let spec = BandSpec::default_six();
    // 10 Hz at fs 256, T 512: exactly bin 20.
    let x: Vec<f64> = (0..512)
        .map(|t| (2.0 * PI * 10.0 * t as f64 / 256.0).sin())
        .collect();
    let rows = band_decompose(&x, &spec).unwrap();
    for (orig, rec) in x.iter().zip(&rows[2]) {
        assert!((orig - rec).abs() <= 1e-9);
    }
    for (k, row) in rows.iter().enumerate() {
        if k != 2 {
            assert!(row.iter().all(|v| v.abs() <= 1e-9), "band {k} not empty");
        }
    }
}

#[test]
fn decompose_reconstructs_and_preserves_energy() {
    let spec = BandSpec::default_six();
    let x = random_signal(512, 11);
    let rows = band_decompose(&x, &spec).unwrap();
    let linf = x.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    for t in 0..512 {
        let sum: f64 = rows.iter().map(|r| r[t]).sum();
        assert!((sum - x[t]).abs() <= 1e-9 * linf);
    }
    // Parseval over disjoint masks: band energies sum to the total.
    let total: f64 = x.iter().map(|v| v * v).sum();
    let band_total: f64 = rows.iter().flat_map(|r| r.iter().map(|v| v * v)).sum();
    assert!((total - band_total).abs() <= 1e-8 * total);
}

#[test]
fn psd_peaks_at_the_tone_bin() {
    let cfg = WelchConfig::default();
    let x: Vec<f64> = (0..512)
        .map(|t| (2.0 * PI * 32.0 * t as f64 / 256.0).sin())
        .collect();
    let est = psd(&x, &cfg).unwrap();
    let peak = est
        .density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    assert!((est.freqs_hz[peak] - 32.0).abs() < 1e-9);
    assert!(est.density.iter().all(|&d| d >= 0.0));
}

#[test]
fn psd_is_even_in_amplitude_and_zero_for_zero() {
    let cfg = WelchConfig::with_segment(256.0, 64);
    let x = random_signal(256, 13);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let a = psd(&x, &cfg).unwrap();
    let b = psd(&neg, &cfg).unwrap();
    for (u, v) in a.density.iter().zip(&b.density) {
        assert!((u - v).abs() < 1e-12);
    }
    let zero = vec![0.0; 256];
    let z = psd(&zero, &cfg).unwrap();
    assert!(z.density.iter().all(|&d| d == 0.0));
}

#[test]
fn psd_rejects_short_signals() {
    let cfg = WelchConfig::default();
    let x = random_signal(128, 17);
    assert!(matches!(psd(&x, &cfg), Err(crate::Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstruction_holds_for_random_signals(seed in 0u64..5000) {
        let spec = BandSpec::default_six();
        let x = random_signal(512, seed);
        let rows = band_decompose(&x, &spec).unwrap();
        let linf = x.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for t in 0..512 {
            let sum: f64 = rows.iter().map(|r| r[t]).sum();
            prop_assert!((sum - x[t]).abs() <= 1e-9 * linf);
        }
    }
}

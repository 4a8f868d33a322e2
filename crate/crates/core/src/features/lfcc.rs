//! Linear-frequency cepstral coefficients.
//!
//! Pipeline per frame: one-sided power spectrum (20 ms window, 10 ms hop,
//! 512-point FFT) -> 20 triangular filters spaced *linearly* from 0 Hz to
//! Nyquist -> `ln(energy + floor)` -> orthonormal DCT-II keeping the first
//! 20 coefficients (c0 included). Delta and delta-delta trajectories
//! (two-frame regression window, replicated edges) are stacked under the
//! statics, giving 60 rows.

use crate::error::Result;
use crate::features::{
    delta_sequence, stft_power, AudioClip, FeatureKind, FeatureMatrix, LOG_FLOOR, SAMPLE_RATE,
};

/// Triangular filters across [0, Nyquist].
pub const LFCC_NUM_FILTERS: usize = 20;
/// Cepstral coefficients kept after the DCT.
pub const LFCC_NUM_CEPS: usize = 20;
/// Output rows: statics + deltas + delta-deltas.
pub const LFCC_ROWS: usize = 3 * LFCC_NUM_CEPS;
/// Analysis window: 20 ms at 16 kHz.
pub const LFCC_WIN: usize = 320;
/// Hop: 10 ms.
pub const LFCC_HOP: usize = 160;
pub const LFCC_NFFT: usize = 512;
/// Regression half-width for the delta computation.
pub const LFCC_DELTA_WINDOW: usize = 2;

/// Dense `[n_filters][nfft/2 + 1]` bank of unit-peak triangles with centers
/// spaced linearly from 0 to Nyquist. Filter `j` rises over
/// `(edge[j], edge[j+1])` and falls over `(edge[j+1], edge[j+2])`, where
/// `edge[i] = i * nyquist / (n_filters + 1)`; interior bins of adjacent
/// filters therefore sum to 1.
pub fn linear_triangular_filterbank(
    n_filters: usize,
    nfft: usize,
    sample_rate: f64,
) -> Vec<Vec<f64>> {
    let bins = nfft / 2 + 1;
    let nyquist = sample_rate / 2.0;
    let edge = |i: usize| i as f64 * nyquist / (n_filters + 1) as f64;
    (0..n_filters)
        .map(|j| {
            let (lo, mid, hi) = (edge(j), edge(j + 1), edge(j + 2));
            (0..bins)
                .map(|b| {
                    let f = b as f64 * sample_rate / nfft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II: `X_k = a_k * sum_n x_n cos(pi*(2n+1)*k / (2N))`
/// with `a_0 = sqrt(1/N)` and `a_k = sqrt(2/N)` otherwise, so the
/// transform matrix is orthogonal.
pub fn dct_ii_orthonormal(input: &[f64]) -> Vec<f64> {
    let n = input.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            let sum: f64 = input
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    x * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()
                })
                .sum();
            scale * sum
        })
        .collect()
}

/// The `lfcc` front-end: 60 rows (statics, deltas, delta-deltas).
pub fn lfcc(clip: &AudioClip) -> Result<FeatureMatrix> {
    let (bins, frames, power) = stft_power(&clip.samples, LFCC_WIN, LFCC_HOP, LFCC_NFFT)?;
    let bank = linear_triangular_filterbank(LFCC_NUM_FILTERS, LFCC_NFFT, SAMPLE_RATE as f64);

    // Static cepstra per frame.
    let mut statics: Vec<Vec<f64>> = Vec::with_capacity(frames);
    for t in 0..frames {
        let spectrum = &power[t * bins..(t + 1) * bins];
        let log_energies: Vec<f64> = bank
            .iter()
            .map(|filter| {
                let e: f64 = filter.iter().zip(spectrum).map(|(w, p)| w * p).sum();
                (e + LOG_FLOOR).ln()
            })
            .collect();
        let mut ceps = dct_ii_orthonormal(&log_energies);
        ceps.truncate(LFCC_NUM_CEPS);
        statics.push(ceps);
    }

    let deltas = delta_sequence(&statics, LFCC_DELTA_WINDOW)?;
    let accels = delta_sequence(&deltas, LFCC_DELTA_WINDOW)?;

    let mut values = Vec::with_capacity(LFCC_ROWS * frames);
    for t in 0..frames {
        values.extend(statics[t].iter().map(|&v| v as f32));
        values.extend(deltas[t].iter().map(|&v| v as f32));
        values.extend(accels[t].iter().map(|&v| v as f32));
    }
    FeatureMatrix::new(FeatureKind::Lfcc, LFCC_ROWS, frames, values)
}

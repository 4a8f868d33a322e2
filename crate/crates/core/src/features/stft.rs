//! Short-time power spectra and the linear log-spectrogram front-end.
//!
//! Frames are taken left-aligned with no centering: frame `t` covers
//! samples `[t*hop, t*hop + win)`, so a clip of `len >= win` samples yields
//! `1 + (len - win)/hop` frames. Clips shorter than one window are
//! zero-padded on the right to a single frame. Each frame is multiplied by
//! a periodic Hann window, zero-padded to the FFT size, and reduced to the
//! one-sided power spectrum `|X|^2` over `nfft/2 + 1` bins.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::features::{AudioClip, FeatureKind, FeatureMatrix, LOG_FLOOR};

/// Spectrogram analysis window: 25 ms at 16 kHz.
pub const SPEC_WIN: usize = 400;
/// Hop: 10 ms at 16 kHz.
pub const SPEC_HOP: usize = 160;
/// FFT size (window is zero-padded up to this).
pub const SPEC_NFFT: usize = 512;
/// One-sided bin count: `SPEC_NFFT/2 + 1`.
pub const SPEC_BINS: usize = SPEC_NFFT / 2 + 1;

/// Periodic Hann window: `0.5 - 0.5*cos(2*pi*i/n)`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frames produced for a clip of `len` samples (short clips give 1 frame).
pub fn spectrogram_frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        1
    } else {
        1 + (len - win) / hop
    }
}

/// One-sided short-time power spectrum, column-major by frame:
/// `(bins, frames, values)` with `values[t*bins + f] = |X_t[f]|^2`.
pub fn stft_power(
    samples: &[f64],
    win: usize,
    hop: usize,
    nfft: usize,
) -> Result<(usize, usize, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::data("stft: empty input"));
    }
    if win == 0 || hop == 0 || nfft < win {
        return Err(Error::config(format!(
            "stft: invalid framing win={win} hop={hop} nfft={nfft}"
        )));
    }
    let bins = nfft / 2 + 1;
    let frames = spectrogram_frame_count(samples.len(), win, hop);
    let window = hann_periodic(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);

    let mut values = Vec::with_capacity(bins * frames);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for t in 0..frames {
        let start = t * hop;
        buf.fill(Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            if let Some(&s) = samples.get(start + i) {
                buf[i] = Complex::new(s * w, 0.0);
            }
        }
        fft.process(&mut buf);
        values.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok((bins, frames, values))
}

/// The `spec` front-end: `ln(|X|^2 + floor)` over [`SPEC_BINS`] bins.
pub fn log_power_spectrogram(clip: &AudioClip) -> Result<FeatureMatrix> {
    let (bins, frames, power) = stft_power(&clip.samples, SPEC_WIN, SPEC_HOP, SPEC_NFFT)?;
    let values = power
        .iter()
        .map(|&p| (p + LOG_FLOOR).ln() as f32)
        .collect();
    FeatureMatrix::new(FeatureKind::Spec, bins, frames, values)
}

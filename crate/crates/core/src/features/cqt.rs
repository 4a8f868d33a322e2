//! Constant-Q transform front-end.
//!
//! Geometrically spaced analysis bins `f_k = fmin * 2^(k/48)` covering nine
//! octaves from 15.625 Hz (432 bins, topping out just under Nyquist). Each
//! bin `k` convolves the signal with a periodic-Hann-windowed complex
//! exponential at `f_k` whose length `N_k = round(Q*fs/f_k)` keeps the
//! ratio of center frequency to bandwidth constant at
//! `Q = 1/(2^(1/48) - 1)`; kernels longer than the clip are truncated to
//! the clip (coarsening the lowest bins). Frames are *centered* on
//! `t*hop` with zero padding outside the clip, every 16 ms. Output is
//! `ln(|X|^2 + floor)`.

use crate::error::Result;
use crate::features::{hann_periodic, AudioClip, FeatureKind, FeatureMatrix, LOG_FLOOR, SAMPLE_RATE};

/// Lowest analysis frequency: nine octaves below Nyquist.
pub const CQT_FMIN_HZ: f64 = 15.625;
pub const CQT_BINS_PER_OCTAVE: usize = 48;
pub const CQT_OCTAVES: usize = 9;
pub const CQT_BINS: usize = CQT_BINS_PER_OCTAVE * CQT_OCTAVES;
/// Hop: 16 ms at 16 kHz.
pub const CQT_HOP: usize = 256;

/// Center frequency of bin `k`.
pub fn cqt_bin_frequency(k: usize) -> f64 {
    CQT_FMIN_HZ * 2f64.powf(k as f64 / CQT_BINS_PER_OCTAVE as f64)
}

/// Quality factor shared by all bins.
fn q_factor() -> f64 {
    1.0 / (2f64.powf(1.0 / CQT_BINS_PER_OCTAVE as f64) - 1.0)
}

/// The `cqt` front-end: 432 log-power rows, frames centered every
/// [`CQT_HOP`] samples (`floor((len-1)/hop) + 1` of them).
pub fn cqt(clip: &AudioClip) -> Result<FeatureMatrix> {
    clip.validate()?;
    let samples = &clip.samples;
    let len = samples.len();
    let fs = SAMPLE_RATE as f64;
    let q = q_factor();
    let frames = (len - 1) / CQT_HOP + 1;

    let mut values = vec![0.0f32; CQT_BINS * frames];
    // Bins outer so each (possibly very long) kernel is built exactly once.
    for k in 0..CQT_BINS {
        let f_k = cqt_bin_frequency(k);
        let n_k = ((q * fs / f_k).round() as usize).clamp(1, len);
        let window = hann_periodic(n_k);
        let norm = 1.0 / n_k as f64;
        let kernel: Vec<(f64, f64)> = (0..n_k)
            .map(|n| {
                let ang = -2.0 * std::f64::consts::PI * f_k * n as f64 / fs;
                (window[n] * ang.cos() * norm, window[n] * ang.sin() * norm)
            })
            .collect();
        let half = (n_k / 2) as isize;
        for t in 0..frames {
            let start = (t * CQT_HOP) as isize - half;
            let (mut re, mut im) = (0.0f64, 0.0f64);
            // Clip the kernel to in-range samples (zero outside the clip).
            let n_lo = (-start).max(0) as usize;
            let n_hi = ((len as isize - start).max(0) as usize).min(n_k);
            for n in n_lo..n_hi {
                let s = samples[(start + n as isize) as usize];
                re += s * kernel[n].0;
                im += s * kernel[n].1;
            }
            values[t * CQT_BINS + k] = ((re * re + im * im) + LOG_FLOOR).ln() as f32;
        }
    }
    FeatureMatrix::new(FeatureKind::Cqt, CQT_BINS, frames, values)
}

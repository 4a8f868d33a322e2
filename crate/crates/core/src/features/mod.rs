//! Acoustic front-ends over 16 kHz mono PCM16 audio.
//!
//! Three feature kinds, all returned as `bins x frames` matrices of natural
//! log power (floored by `LOG_FLOOR` before the log):
//!
//! - **spec**: linear-frequency log power spectrogram — 25 ms periodic Hann
//!   window, 10 ms hop, 512-point FFT, 257 bins;
//! - **lfcc**: linear-frequency cepstral coefficients — 20 ms window, 10 ms
//!   hop, 20 triangular filters spaced linearly to Nyquist, orthonormal
//!   DCT-II keeping 20 coefficients (including c0), plus delta and
//!   delta-delta: 60 rows;
//! - **cqt**: constant-Q transform — 9 octaves at 48 bins/octave (432 bins)
//!   from 15.625 Hz, 16 ms hop.
//!
//! Classifier input is normalized to exactly [`TARGET_FRAMES`] frames by
//! [`fix_frames`]: longer utterances are truncated from the start, shorter
//! ones are tiled (the whole matrix repeated, then cut).

mod cache;
mod cqt;
mod lfcc;
mod stft;
mod wav;

pub use cache::{decode_feature, encode_feature, load_feature, save_feature};
pub use cqt::{cqt, cqt_bin_frequency, CQT_BINS, CQT_BINS_PER_OCTAVE, CQT_FMIN_HZ, CQT_HOP};
pub use lfcc::{dct_ii_orthonormal, lfcc, linear_triangular_filterbank, LFCC_NUM_CEPS,
    LFCC_NUM_FILTERS, LFCC_ROWS};
pub use stft::{hann_periodic, log_power_spectrogram, spectrogram_frame_count, stft_power,
    SPEC_BINS, SPEC_HOP, SPEC_NFFT, SPEC_WIN};
pub use wav::{read_wav_pcm16_mono, write_wav_pcm16_mono};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::fnv1a64;

/// Required sample rate; there is no resampling.
pub const SAMPLE_RATE: u32 = 16_000;
/// Additive floor applied before every log: `ln(power + LOG_FLOOR)`.
pub const LOG_FLOOR: f64 = 1e-10;
/// Number of frames the classifier consumes.
pub const TARGET_FRAMES: usize = 400;

/// Decoded mono audio.
#[derive(Debug, Clone)]
pub struct AudioClip {
    /// Samples scaled to [-1, 1).
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    /// Reject clips the front-ends cannot process.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::data(format!(
                "audio must be {SAMPLE_RATE} Hz, got {} Hz (resampling is not supported)",
                self.sample_rate
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::data("audio clip is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Spec,
    Lfcc,
    Cqt,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Spec, FeatureKind::Lfcc, FeatureKind::Cqt];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Spec => "spec",
            FeatureKind::Lfcc => "lfcc",
            FeatureKind::Cqt => "cqt",
        }
    }

    pub fn from_name(name: &str) -> Result<FeatureKind> {
        match name {
            "spec" => Ok(FeatureKind::Spec),
            "lfcc" => Ok(FeatureKind::Lfcc),
            "cqt" => Ok(FeatureKind::Cqt),
            other => Err(Error::config(format!("unknown feature kind: {other}"))),
        }
    }

    /// Number of rows this front-end produces.
    pub fn bins(&self) -> usize {
        match self {
            FeatureKind::Spec => SPEC_BINS,
            FeatureKind::Lfcc => LFCC_ROWS,
            FeatureKind::Cqt => CQT_BINS,
        }
    }

    /// Cache tag byte (stable across releases).
    pub fn tag(&self) -> u8 {
        match self {
            FeatureKind::Spec => 0,
            FeatureKind::Lfcc => 1,
            FeatureKind::Cqt => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<FeatureKind> {
        match tag {
            0 => Ok(FeatureKind::Spec),
            1 => Ok(FeatureKind::Lfcc),
            2 => Ok(FeatureKind::Cqt),
            other => Err(Error::data(format!("unknown feature tag {other}"))),
        }
    }

    /// Fingerprint of this front-end's full parameterization; embedded in
    /// cache files so stale caches are detected when constants change.
    pub fn config_hash(&self) -> u64 {
        let descr = match self {
            FeatureKind::Spec => format!(
                "spec:v1;sr={SAMPLE_RATE};win={SPEC_WIN};hop={SPEC_HOP};nfft={SPEC_NFFT};floor={LOG_FLOOR:e}"
            ),
            FeatureKind::Lfcc => format!(
                "lfcc:v1;sr={SAMPLE_RATE};filters={LFCC_NUM_FILTERS};ceps={LFCC_NUM_CEPS};floor={LOG_FLOOR:e}"
            ),
            FeatureKind::Cqt => format!(
                "cqt:v1;sr={SAMPLE_RATE};fmin={CQT_FMIN_HZ};bpo={CQT_BINS_PER_OCTAVE};bins={CQT_BINS};hop={CQT_HOP};floor={LOG_FLOOR:e}"
            ),
        };
        fnv1a64(descr.as_bytes())
    }
}

/// A `bins x frames` feature matrix in `f32`, stored column-major by frame:
/// `values[t*bins + f]` is bin `f` of frame `t` (matching the cache file
/// layout, one contiguous run per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, bins: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != bins * frames {
            return Err(Error::config(format!(
                "feature matrix: {bins}x{frames} needs {} values, got {}",
                bins * frames,
                values.len()
            )));
        }
        Ok(FeatureMatrix {
            kind,
            bins,
            frames,
            values,
        })
    }

    #[inline]
    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[frame * self.bins + bin]
    }

    /// One frame's bins, contiguous.
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    /// Index of the strongest bin in frame `t`.
    pub fn argmax_bin(&self, t: usize) -> usize {
        let frame = self.frame(t);
        let mut best = 0;
        for (i, &v) in frame.iter().enumerate() {
            if v > frame[best] {
                best = i;
            }
        }
        best
    }

    /// Network input layout `[1, 1, bins, frames]` (row-major over bins,
    /// then frames — transposed from storage order).
    pub fn to_input_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (b, fr) = (self.bins, self.frames);
        Tensor::from_fn(&[1, 1, b, fr], |i| {
            let bin = i / fr;
            let t = i % fr;
            T::from_f64(self.values[t * b + bin] as f64)
        })
    }
}

/// Compute the requested front-end at its native frame count.
pub fn extract(clip: &AudioClip, kind: FeatureKind) -> Result<FeatureMatrix> {
    clip.validate()?;
    let m = match kind {
        FeatureKind::Spec => log_power_spectrogram(clip)?,
        FeatureKind::Lfcc => lfcc(clip)?,
        FeatureKind::Cqt => cqt(clip)?,
    };
    debug_assert_eq!(m.bins, kind.bins());
    Ok(m)
}

/// [`extract`], then [`fix_frames`] to [`TARGET_FRAMES`] — the classifier's
/// input contract.
pub fn extract_fixed(clip: &AudioClip, kind: FeatureKind) -> Result<FeatureMatrix> {
    fix_frames(&extract(clip, kind)?, TARGET_FRAMES)
}

/// Normalize the frame count: truncate from the start when too long, tile
/// the whole matrix (then cut) when too short. Idempotent at the target.
pub fn fix_frames(m: &FeatureMatrix, target: usize) -> Result<FeatureMatrix> {
    if target == 0 {
        return Err(Error::config("fix_frames: target must be >= 1"));
    }
    if m.frames == 0 {
        return Err(Error::data("fix_frames: empty feature matrix"));
    }
    if m.frames == target {
        return Ok(m.clone());
    }
    let mut values = Vec::with_capacity(m.bins * target);
    for t in 0..target {
        values.extend_from_slice(m.frame(t % m.frames));
    }
    FeatureMatrix::new(m.kind, m.bins, target, values)
}

/// Regression-style deltas over a coefficient sequence (`series[t]` is the
/// frame-`t` vector): `d_t = sum_{n=1..W} n*(c_{t+n} - c_{t-n}) /
/// (2*sum n^2)`, with edge frames replicated.
pub fn delta_sequence(series: &[Vec<f64>], window: usize) -> Result<Vec<Vec<f64>>> {
    if series.is_empty() {
        return Err(Error::data("delta_sequence: empty series"));
    }
    if window == 0 {
        return Err(Error::config("delta_sequence: window must be >= 1"));
    }
    let dim = series[0].len();
    if series.iter().any(|c| c.len() != dim) {
        return Err(Error::config("delta_sequence: ragged series"));
    }
    let t_max = series.len() - 1;
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |t: isize| -> &Vec<f64> { &series[t.clamp(0, t_max as isize) as usize] };
    Ok((0..series.len())
        .map(|t| {
            (0..dim)
                .map(|d| {
                    (1..=window)
                        .map(|n| {
                            let ahead = clamp(t as isize + n as isize)[d];
                            let behind = clamp(t as isize - n as isize)[d];
                            n as f64 * (ahead - behind)
                        })
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect())
}

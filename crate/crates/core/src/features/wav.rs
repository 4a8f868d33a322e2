//! Minimal RIFF/WAVE codec for 16-bit PCM mono files.
//!
//! The reader walks RIFF chunks (skipping unknown ones, honoring the
//! even-byte chunk padding rule), requires integer PCM with 16 bits per
//! sample and exactly one channel, and scales samples to [-1, 1) by
//! dividing by 32768. Everything else is rejected with a descriptive
//! error rather than silently mis-decoded.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::AudioClip;

const RIFF: &[u8; 4] = b"RIFF";
const WAVE: &[u8; 4] = b"WAVE";
const FMT: &[u8; 4] = b"fmt ";
const DATA: &[u8; 4] = b"data";

/// Integer PCM format code in the `fmt ` chunk.
const FORMAT_PCM: u16 = 1;

fn read_u16(bytes: &[u8], at: usize) -> Option<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn bad(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::data(format!("{}: {what}", path.display()))
}

/// Decode a 16-bit PCM mono WAV file.
pub fn read_wav_pcm16_mono(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 12 || &bytes[0..4] != RIFF || &bytes[8..12] != WAVE {
        return Err(bad(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut at = 12usize;
    while at + 8 <= bytes.len() {
        let id: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
        let size = read_u32(&bytes, at + 4).unwrap() as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad(path, "truncated chunk"))?;
        let body = &bytes[body_start..body_end];
        match &id {
            id if id == FMT => {
                if size < 16 {
                    return Err(bad(path, "fmt chunk too short"));
                }
                fmt = Some((
                    read_u16(body, 0).unwrap(),
                    read_u16(body, 2).unwrap(),
                    read_u32(body, 4).unwrap(),
                    read_u16(body, 14).unwrap(),
                ));
            }
            id if id == DATA => {
                data = Some(body);
            }
            _ => {} // skip unrelated chunks (LIST, fact, ...)
        }
        // Chunk bodies are padded to even length.
        at = body_end + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| bad(path, "missing fmt chunk"))?;
    if format != FORMAT_PCM {
        return Err(bad(path, format!("unsupported format code {format} (want integer PCM)")));
    }
    if bits != 16 {
        return Err(bad(path, format!("unsupported bit depth {bits} (want 16)")));
    }
    if channels != 1 {
        return Err(bad(path, format!("unsupported channel count {channels} (want mono)")));
    }
    let data = data.ok_or_else(|| bad(path, "missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(bad(path, "data chunk has odd byte length"));
    }

    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: rate,
    })
}

/// Write samples (clamped to [-1, 1]) as a 16-bit PCM mono WAV file.
pub fn write_wav_pcm16_mono(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(RIFF);
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(WAVE);

    out.extend_from_slice(FMT);
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // channels
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample

    out.extend_from_slice(DATA);
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }

    crate::util::atomic_write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SAMPLE_RATE;

    #[test]
    fn roundtrip_preserves_samples_to_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let samples: Vec<f64> = (0..320)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        write_wav_pcm16_mono(&path, &samples, SAMPLE_RATE).unwrap();
        let clip = read_wav_pcm16_mono(&path).unwrap();
        assert_eq!(clip.sample_rate, SAMPLE_RATE);
        assert_eq!(clip.samples.len(), samples.len());
        for (a, b) in clip.samples.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn known_bytes_decode_exactly() {
        // Hand-built file holding the samples [0, 16384, -32768].
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 6).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&6u32.to_le_bytes());
        for s in [0i16, 16384, -32768] {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let clip = read_wav_pcm16_mono(&path).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -1.0]);
    }

    #[test]
    fn skips_unknown_chunks_before_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&0u32.to_le_bytes()); // size field is not trusted
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        // An odd-sized stray chunk, padded to even.
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1000i16.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let clip = read_wav_pcm16_mono(&path).unwrap();
        assert_eq!(clip.samples.len(), 1);
        assert!((clip.samples[0] - 1000.0 / 32768.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_stereo_and_wrong_depth_and_garbage() {
        let dir = tempfile::tempdir().unwrap();

        let garbage = dir.path().join("garbage.wav");
        std::fs::write(&garbage, b"not audio at all").unwrap();
        assert!(matches!(read_wav_pcm16_mono(&garbage), Err(Error::Data(_))));

        let build = |channels: u16, bits: u16| {
            let mut b = Vec::new();
            b.extend_from_slice(b"RIFF");
            b.extend_from_slice(&40u32.to_le_bytes());
            b.extend_from_slice(b"WAVE");
            b.extend_from_slice(b"fmt ");
            b.extend_from_slice(&16u32.to_le_bytes());
            b.extend_from_slice(&1u16.to_le_bytes());
            b.extend_from_slice(&channels.to_le_bytes());
            b.extend_from_slice(&16000u32.to_le_bytes());
            b.extend_from_slice(&32000u32.to_le_bytes());
            b.extend_from_slice(&2u16.to_le_bytes());
            b.extend_from_slice(&bits.to_le_bytes());
            b.extend_from_slice(b"data");
            b.extend_from_slice(&0u32.to_le_bytes());
            b
        };
        let stereo = dir.path().join("stereo.wav");
        std::fs::write(&stereo, build(2, 16)).unwrap();
        let err = read_wav_pcm16_mono(&stereo).unwrap_err().to_string();
        assert!(err.contains("channel count 2"), "{err}");

        let eight = dir.path().join("eight.wav");
        std::fs::write(&eight, build(1, 8)).unwrap();
        let err = read_wav_pcm16_mono(&eight).unwrap_err().to_string();
        assert!(err.contains("bit depth 8"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_wav_pcm16_mono(Path::new("/nonexistent/nope.wav")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}

//! Synthetic toy dataset: harmonic tones stand in for bonafide speech and
//! low-pass filtered noise for spoofed audio. The two classes have matched
//! RMS levels but very different spectral envelopes, so any of the
//! front-ends separates them — which makes the dataset a self-contained
//! end-to-end exercise for extract → train → score → evaluate.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use res2spoof::error::Result;
use res2spoof::features::{write_wav_pcm16_mono, SAMPLE_RATE};
use res2spoof::metrics::Label;
use res2spoof::util::atomic_write;

use crate::manifest::{Manifest, ManifestEntry};

pub const TRAIN_PER_CLASS: usize = 32; // 64 training utterances
pub const DEV_PER_CLASS: usize = 8; // 16
pub const EVAL_PER_CLASS: usize = 16; // 32
const CLIP_SECONDS: f64 = 1.0;

/// Harmonic stack: fundamental in [220, 880] Hz with two overtones.
fn tone(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let f0 = rng.gen_range(220.0..880.0);
    let gain = rng.gen_range(0.8..1.0);
    let phases: [f64; 3] = [
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
    ];
    let amps = [0.5, 0.25, 0.125];
    (0..len)
        .map(|n| {
            let t = n as f64 / SAMPLE_RATE as f64;
            let mut v = 0.0;
            for h in 0..3 {
                let f = f0 * (h + 1) as f64;
                v += amps[h] * (std::f64::consts::TAU * f * t + phases[h]).sin();
            }
            gain * v
        })
        .collect()
}

/// White noise through a one-pole low-pass, RMS-matched to the tones so
/// overall level is not a shortcut cue. `alpha` sets the attack variant.
fn filtered_noise(rng: &mut ChaCha8Rng, len: usize, alpha: f64) -> Vec<f64> {
    let mut state = 0.0;
    let mut samples: Vec<f64> = (0..len)
        .map(|_| {
            let white: f64 = rng.gen_range(-1.0..1.0);
            state = alpha * state + (1.0 - alpha) * white;
            state
        })
        .collect();
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    let target = 0.37; // roughly the harmonic stack's RMS
    if rms > 0.0 {
        let scale = target / rms;
        for v in &mut samples {
            *v *= scale;
        }
    }
    samples
}

struct Item {
    utt_id: String,
    label: Label,
    attack: String,
    samples: Vec<f64>,
}

fn make_split(rng: &mut ChaCha8Rng, split: &str, per_class: usize) -> Vec<Item> {
    let len = (CLIP_SECONDS * SAMPLE_RATE as f64) as usize;
    let mut items = Vec::with_capacity(2 * per_class);
    for i in 0..per_class {
        items.push(Item {
            utt_id: format!("{split}_b{i:03}"),
            label: Label::Bonafide,
            attack: "-".to_string(),
            samples: tone(rng, len),
        });
        // Two spoof variants: a heavy and a mild low-pass.
        let (attack, alpha) = if i % 2 == 0 { ("A01", 0.95) } else { ("A02", 0.8) };
        items.push(Item {
            utt_id: format!("{split}_s{i:03}"),
            label: Label::Spoof,
            attack: attack.to_string(),
            samples: filtered_noise(rng, len, alpha),
        });
    }
    items
}

/// Hyperparameters sized for the miniature network on this dataset.
const TOY_CONFIG: &str = "\
# Toy run: miniature squeeze-excite multi-scale net on the synthetic set.
feature = lfcc
arch = tiny_se_res2net50
frames = 100
epochs = 20
warmup_steps = 64
batch_size = 8
lr_peak = 5e-3
seed = 7
";

pub struct SynthSummary {
    pub out_dir: PathBuf,
    pub wav_count: usize,
}

/// Generate the dataset under `out_dir`: WAVs, one manifest per partition,
/// a ground-truth protocol, a ready-to-run config file, and a small
/// challenge-layout manifest demonstrating the 5-column protocol format.
pub fn generate(out_dir: &Path, seed: u64) -> Result<SynthSummary> {
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir)
        .map_err(|e| res2spoof::Error::io(wav_dir.display().to_string(), e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = [
        ("train", make_split(&mut rng, "train", TRAIN_PER_CLASS)),
        ("dev", make_split(&mut rng, "dev", DEV_PER_CLASS)),
        ("eval", make_split(&mut rng, "eval", EVAL_PER_CLASS)),
    ];

    let mut protocol = String::new();
    let mut wav_count = 0;
    for (name, items) in &splits {
        let mut manifest = Manifest {
            root: out_dir.to_path_buf(),
            entries: Vec::with_capacity(items.len()),
        };
        for item in items {
            write_wav_pcm16_mono(
                &wav_dir.join(format!("{}.wav", item.utt_id)),
                &item.samples,
                SAMPLE_RATE,
            )?;
            wav_count += 1;
            manifest.entries.push(ManifestEntry {
                utt_id: item.utt_id.clone(),
                rel_path: format!("wav/{}.wav", item.utt_id),
                label: Some(item.label),
                attack: item.attack.clone(),
            });
        }
        atomic_write(
            &out_dir.join(format!("{name}.txt")),
            manifest.render_native().as_bytes(),
        )?;
        protocol.push_str(&manifest.render_protocol()?);
    }
    atomic_write(&out_dir.join("protocol.txt"), protocol.as_bytes())?;
    atomic_write(&out_dir.join("toy.cfg"), TOY_CONFIG.as_bytes())?;

    // A five-line manifest in the challenge protocol layout, pointing at
    // eval clips; lives next to the WAVs so `utt_id.wav` resolves there.
    let demo = splits[2]
        .1
        .iter()
        .take(5)
        .enumerate()
        .map(|(i, item)| {
            format!(
                "SPK_{:02} {} - {} {}\n",
                1 + i,
                item.utt_id,
                item.attack,
                item.label.name()
            )
        })
        .collect::<String>();
    atomic_write(&wav_dir.join("challenge_demo.txt"), demo.as_bytes())?;

    Ok(SynthSummary {
        out_dir: out_dir.to_path_buf(),
        wav_count,
    })
}

//! The pipeline commands: extract → train → score → evaluate → fuse,
//! plus the parameter-count report. Each command is a plain function so
//! the test suite can drive the same code paths the binary does.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use res2spoof::checkpoint::{load_model, peek_config_hash, save_model, META_FEATURE, META_FRAMES};
use res2spoof::error::{Error, Result};
use res2spoof::features::{
    extract, fix_frames, load_feature, read_wav_pcm16_mono, save_feature, FeatureKind,
    FeatureMatrix,
};
use res2spoof::metrics::{
    eer_from_scores, format_score_line, fuse_scores, label_scores, min_tdcf_from_scores,
    read_protocol_file, read_score_file, Label, ScoreRecord, TdcfCosts,
};
use res2spoof::model::{build_model, ArchId, Model, ModelConfig};
use res2spoof::nn::{Restore, Snapshot};
use res2spoof::train::{train, TrainExample};
use res2spoof::util::{atomic_write, fnv1a64};
use res2spoof::{Scalar, Tensor};

use crate::manifest::{check_disjoint, Manifest};
use crate::runconfig::RunConfig;

/// Every architecture a checkpoint could have been trained with.
fn known_archs() -> impl Iterator<Item = ArchId> {
    ArchId::STANDARD
        .iter()
        .copied()
        .chain(std::iter::once(ArchId::TinySeRes2Net50))
}

fn run_rayon<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cache_path(cfg: &RunConfig, utt_id: &str) -> PathBuf {
    cfg.feature_cache_dir().join(format!("{utt_id}.feat"))
}

/// A cache file counts as current when it decodes cleanly (magic, version,
/// config hash) to the requested kind and frame count.
fn cache_is_current(path: &Path, cfg: &RunConfig) -> bool {
    match load_feature(path) {
        Ok(m) => m.kind == cfg.feature && m.frames == cfg.frames,
        Err(_) => false,
    }
}

// ---------------------------------------------------------------------------
// extract

pub fn cmd_extract(
    manifest_path: &Path,
    root: Option<&Path>,
    cfg: &RunConfig,
    jobs: Option<usize>,
) -> Result<()> {
    cfg.validate()?;
    let manifest = Manifest::load(manifest_path, root)?;
    create_dir(&cfg.feature_cache_dir())?;

    enum Outcome {
        Extracted,
        Skipped,
    }
    let work = |entry: &crate::manifest::ManifestEntry| -> Result<Outcome> {
        let target = cache_path(cfg, &entry.utt_id);
        if cache_is_current(&target, cfg) {
            return Ok(Outcome::Skipped);
        }
        let clip = read_wav_pcm16_mono(&manifest.wav_path(entry))?;
        let matrix = fix_frames(&extract(&clip, cfg.feature)?, cfg.frames)?;
        save_feature(&target, &matrix)?;
        Ok(Outcome::Extracted)
    };

    let results: Vec<(&str, Result<Outcome>)> = run_rayon(jobs, || {
        manifest
            .entries
            .par_iter()
            .map(|e| (e.utt_id.as_str(), work(e)))
            .collect()
    })?;

    let (mut extracted, mut skipped, mut failed) = (0usize, 0usize, 0usize);
    for (utt_id, result) in &results {
        match result {
            Ok(Outcome::Extracted) => extracted += 1,
            Ok(Outcome::Skipped) => skipped += 1,
            Err(e) => {
                failed += 1;
                eprintln!("extract {utt_id}: {e}");
            }
        }
    }
    let cache_bytes: u64 = manifest
        .entries
        .iter()
        .filter_map(|e| std::fs::metadata(cache_path(cfg, &e.utt_id)).ok())
        .map(|m| m.len())
        .sum();
    println!(
        "extracted={extracted} skipped={skipped} failed={failed} feature={} bins={} frames={} cache_bytes={cache_bytes}",
        cfg.feature.name(),
        cfg.feature.bins(),
        cfg.frames
    );
    if failed > 0 {
        return Err(Error::data(format!(
            "{failed} of {} utterances failed feature extraction",
            manifest.entries.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared cache loading

/// Load every cached matrix for a manifest, in manifest order. Missing
/// files are enumerated in one error; stale or mismatched entries ask for
/// re-extraction.
fn load_cached(manifest: &Manifest, cfg: &RunConfig) -> Result<Vec<(String, FeatureMatrix)>> {
    let dir = cfg.feature_cache_dir();
    let mut missing: Vec<&str> = Vec::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let path = cache_path(cfg, &entry.utt_id);
        if !path.is_file() {
            missing.push(&entry.utt_id);
            continue;
        }
        let m = load_feature(&path)
            .map_err(|e| Error::data(format!("{}: {e}; re-run extract", path.display())))?;
        if m.kind != cfg.feature || m.frames != cfg.frames {
            return Err(Error::data(format!(
                "{}: cached as {} with {} frames, run wants {} with {} frames; re-run extract",
                path.display(),
                m.kind.name(),
                m.frames,
                cfg.feature.name(),
                cfg.frames
            )));
        }
        out.push((entry.utt_id.clone(), m));
    }
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "{} cached feature(s) missing under {} (run extract first): {}",
            missing.len(),
            dir.display(),
            crate::manifest::preview(&missing)
        )));
    }
    Ok(out)
}

fn to_examples(manifest: &Manifest, cfg: &RunConfig) -> Result<Vec<TrainExample>> {
    let labeled = manifest.require_labels()?;
    let features = load_cached(manifest, cfg)?;
    Ok(labeled
        .iter()
        .zip(features)
        .map(|((_, label), (utt_id, features))| TrainExample {
            utt_id,
            features,
            label: *label,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// train

fn binding_extras<T: Scalar>(cfg: &RunConfig) -> Vec<(String, Tensor<T>)> {
    let scalar = |v: f64| {
        Tensor::new(vec![1], vec![T::from_f64(v)]).expect("one value, one slot")
    };
    vec![
        (META_FEATURE.to_string(), scalar(cfg.feature.tag() as f64)),
        (META_FRAMES.to_string(), scalar(cfg.frames as f64)),
    ]
}

/// Front-end binding recorded in a checkpoint, if present.
fn read_binding<T: Scalar>(extras: &[(String, Tensor<T>)]) -> Result<Option<(FeatureKind, usize)>> {
    let find = |name: &str| {
        extras
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data()[0].as_f64())
    };
    match (find(META_FEATURE), find(META_FRAMES)) {
        (Some(tag), Some(frames)) => {
            let kind = FeatureKind::from_tag(tag as u8)?;
            Ok(Some((kind, frames as usize)))
        }
        (None, None) => Ok(None),
        _ => Err(Error::data("checkpoint metadata is incomplete")),
    }
}

pub fn cmd_train(
    cfg: &RunConfig,
    train_path: &Path,
    dev_path: &Path,
    root: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    let train_manifest = Manifest::load(train_path, root)?;
    let dev_manifest = Manifest::load(dev_path, root)?;
    check_disjoint(&train_manifest, "train", &dev_manifest, "dev")?;
    let train_set = to_examples(&train_manifest, cfg)?;
    let dev_set = to_examples(&dev_manifest, cfg)?;

    let config = cfg.model_config();
    let mut model: Model<f32> = build_model(&config, cfg.train.seed)?;
    println!(
        "arch={} feature={} frames={} params={} train={} dev={} config={:016x}",
        cfg.arch.name(),
        cfg.feature.name(),
        cfg.frames,
        model.count_parameters(),
        train_set.len(),
        dev_set.len(),
        cfg.output_hash()
    );

    let mut log_lines = String::new();
    let outcome = train(&mut model, &train_set, &dev_set, &cfg.train, |s| {
        let line = format!(
            "epoch={} loss={:.6} lr={:.6e} dev_eer={:.6}",
            s.epoch, s.mean_loss, s.lr, s.dev_eer
        );
        println!("{line}");
        log_lines.push_str(&line);
        log_lines.push('\n');
    })?;

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_model(out, &mut model, &binding_extras::<f32>(cfg), outcome.steps)?;
    if let Some(path) = log {
        atomic_write(path, log_lines.as_bytes())?;
    }
    println!(
        "best_epoch={} best_dev_eer={:.6} steps={} checkpoint={}",
        outcome.best_epoch,
        outcome.best_dev_eer,
        outcome.steps,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// score

// The arity mirrors the CLI surface (one value per flag); bundling them
// into a struct would just restate the clap definition.
#[allow(clippy::too_many_arguments)]
pub fn cmd_score(
    checkpoint: &Path,
    manifest_path: &Path,
    root: Option<&Path>,
    base: &RunConfig,
    arch_flag: Option<ArchId>,
    feature_flag: Option<FeatureKind>,
    out: &Path,
    jobs: Option<usize>,
) -> Result<()> {
    let bytes =
        std::fs::read(checkpoint).map_err(|e| Error::io(checkpoint.display().to_string(), e))?;
    let hash = peek_config_hash(&bytes)?;
    drop(bytes);
    let arch = known_archs()
        .find(|a| ModelConfig::for_arch(*a).config_hash() == hash)
        .ok_or_else(|| {
            Error::data(format!(
                "checkpoint model config {hash:016x} matches no known architecture"
            ))
        })?;
    if let Some(explicit) = arch_flag {
        if explicit != arch {
            return Err(Error::data(format!(
                "--arch {} does not match the checkpoint ({})",
                explicit.name(),
                arch.name()
            )));
        }
    }

    let config = ModelConfig::for_arch(arch);
    let mut model: Model<f32> = build_model(&config, 0)?;
    let (_step, extras) = load_model(checkpoint, &mut model)?;

    // Bind the front-end: normally recorded in the checkpoint; an explicit
    // --feature must agree with it.
    let mut cfg = base.clone();
    cfg.arch = arch;
    match read_binding(&extras)? {
        Some((kind, frames)) => {
            if let Some(explicit) = feature_flag {
                if explicit != kind {
                    return Err(Error::data(format!(
                        "--feature {} does not match the checkpoint (trained on {} at {} frames)",
                        explicit.name(),
                        kind.name(),
                        frames
                    )));
                }
            }
            cfg.feature = kind;
            cfg.frames = frames;
        }
        None => match feature_flag {
            Some(kind) => cfg.feature = kind,
            None => {
                return Err(Error::data(
                    "checkpoint does not record its front-end; pass --feature explicitly",
                ));
            }
        },
    }
    cfg.validate()?;

    let manifest = Manifest::load(manifest_path, root)?;
    let features = load_cached(&manifest, &cfg)?;

    // Parallel over chunks: each task runs its own replica of the frozen
    // model (layers hold forward caches, so they cannot be shared).
    let mut frozen = Snapshot::<f32>::default();
    model.visit(&mut frozen);
    let chunks: Vec<Result<Vec<(String, f64)>>> = run_rayon(jobs, || {
        features
            .par_chunks(16)
            .map(|chunk| {
                let mut replica: Model<f32> = build_model(&config, 0)?;
                let mut restore = Restore::new(&frozen.tensors);
                replica.visit(&mut restore);
                chunk
                    .iter()
                    .map(|(utt_id, m)| {
                        let score = replica.score_bonafide(&m.to_input_tensor())?;
                        Ok((utt_id.clone(), score))
                    })
                    .collect()
            })
            .collect()
    })?;

    let mut text = format!("# config {:016x}\n", cfg.output_hash());
    let mut count = 0usize;
    for chunk in chunks {
        for (utt_id, score) in chunk? {
            text.push_str(&format_score_line(&utt_id, score));
            text.push('\n');
            count += 1;
        }
    }
    atomic_write(out, text.as_bytes())?;
    println!(
        "scored={count} arch={} feature={} out={} config={:016x}",
        arch.name(),
        cfg.feature.name(),
        out.display(),
        cfg.output_hash()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

pub fn cmd_evaluate(scores_path: &Path, protocol_path: &Path, costs: &TdcfCosts) -> Result<()> {
    costs.validate()?;
    let scores = read_score_file(scores_path)?;
    let protocol = read_protocol_file(protocol_path)?;
    let labeled = label_scores(&scores, &protocol)?;

    let bona: Vec<f64> = labeled
        .iter()
        .filter(|r| r.label == Some(Label::Bonafide))
        .map(|r| r.score)
        .collect();
    let spoof: Vec<f64> = labeled
        .iter()
        .filter(|r| r.label == Some(Label::Spoof))
        .map(|r| r.score)
        .collect();
    let (eer, _) = eer_from_scores(&bona, &spoof)?;
    let tdcf = min_tdcf_from_scores(&bona, &spoof, costs)?;
    println!("EER {:.4}% t-DCF {:.4}", eer * 100.0, tdcf);

    // Per-attack breakdown: each spoof attack against all bonafide trials.
    let attack_of: BTreeMap<&str, &str> = protocol
        .iter()
        .map(|e| (e.utt_id.as_str(), e.attack.as_str()))
        .collect();
    let attacks: BTreeSet<&str> = labeled
        .iter()
        .filter(|r| r.label == Some(Label::Spoof))
        .filter_map(|r| attack_of.get(r.utt_id.as_str()).copied())
        .filter(|a| *a != "-")
        .collect();
    for attack in attacks {
        let subset: Vec<f64> = labeled
            .iter()
            .filter(|r| {
                r.label == Some(Label::Spoof)
                    && attack_of.get(r.utt_id.as_str()).copied() == Some(attack)
            })
            .map(|r| r.score)
            .collect();
        let (attack_eer, _) = eer_from_scores(&bona, &subset)?;
        println!("attack {attack} EER {:.4}%", attack_eer * 100.0);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fuse

/// First `# config` value in a score file, if any.
fn score_header_hash(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        return line.strip_prefix("# config ").map(str::to_string);
    }
    None
}

pub fn cmd_fuse(inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::config("fuse: at least one score file required"));
    }
    let systems: Vec<Vec<ScoreRecord>> = inputs
        .iter()
        .map(|p| read_score_file(p))
        .collect::<Result<_>>()?;
    let fused = fuse_scores(&systems)?;

    // The fused file's config hash digests its inputs' hashes, in order.
    let child_hashes: Vec<String> = inputs
        .iter()
        .map(|p| score_header_hash(p).unwrap_or_else(|| "-".to_string()))
        .collect();
    let fused_hash = fnv1a64(format!("fuse:{}", child_hashes.join(",")).as_bytes());

    let mut text = format!("# config {fused_hash:016x}\n");
    for r in &fused {
        text.push_str(&format_score_line(&r.utt_id, r.score));
        text.push('\n');
    }
    atomic_write(out, text.as_bytes())?;
    println!("fused={} systems={} out={}", fused.len(), systems.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// params

pub fn cmd_params(arch: ArchId) -> Result<()> {
    let config = ModelConfig::for_arch(arch);
    let mut model: Model<f32> = build_model(&config, 0)?;
    let rows = model.section_param_table();
    let total = model.count_parameters();
    println!("arch {}", arch.name());
    for (section, count) in &rows {
        println!("{section:<8} {count:>9}");
    }
    println!("total    {total:>9}  ({:.2}M)", total as f64 / 1e6);
    Ok(())
}

//! Behavior of the `res2spoof` binary: exit codes, output formats, cache
//! idempotence, checkpoint/front-end binding checks, and determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

use res2spoof::checkpoint::{save_model, META_FEATURE, META_FRAMES};
use res2spoof::features::{
    extract, fix_frames, load_feature, read_wav_pcm16_mono, write_wav_pcm16_mono, FeatureKind,
    FeatureMatrix, SAMPLE_RATE,
};
use res2spoof::model::{build_model, ArchId, ModelConfig};
use res2spoof::nn::{Param, Visitor};
use res2spoof::Tensor;

const BIN: &str = env!("CARGO_BIN_EXE_res2spoof");

struct Run {
    status: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let out = Command::new(BIN)
        .args(args)
        .output()
        .expect("binary should execute");
    Run {
        status: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn s(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

/// A 1-second tone at `hz`, written as PCM16 WAV.
fn write_tone(path: &Path, hz: f64) {
    let samples: Vec<f64> = (0..SAMPLE_RATE as usize)
        .map(|n| 0.5 * (std::f64::consts::TAU * hz * n as f64 / SAMPLE_RATE as f64).sin())
        .collect();
    write_wav_pcm16_mono(path, &samples, SAMPLE_RATE).unwrap();
}

/// `count` tone WAVs under `dir/wav` plus a labeled native manifest.
fn tone_dataset(dir: &Path, name: &str, count: usize) -> PathBuf {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).unwrap();
    let mut manifest = String::new();
    for i in 0..count {
        let utt = format!("{name}{i:02}");
        write_tone(&wav_dir.join(format!("{utt}.wav")), 300.0 + 50.0 * i as f64);
        let label = if i % 2 == 0 { "bonafide" } else { "spoof" };
        manifest.push_str(&format!("{utt} wav/{utt}.wav {label} -\n"));
    }
    let path = dir.join(format!("{name}.txt"));
    std::fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn usage_problems_exit_1_and_help_exits_0() {
    assert_eq!(run(&[]).status, 1, "no arguments");
    assert_eq!(run(&["frobnicate"]).status, 1, "unknown verb");
    assert_eq!(run(&["params", "--arch", "vgg16"]).status, 1, "unknown arch");
    assert_eq!(run(&["params"]).status, 1, "missing required flag");
    assert_eq!(
        run(&["extract", "--manifest", "x.txt", "--feature", "mfcc"]).status,
        1,
        "unknown front-end"
    );
    assert_eq!(run(&["--help"]).status, 0);
    assert_eq!(run(&["--version"]).status, 0);
}

#[test]
fn params_prints_sections_exact_totals_and_millions_form() {
    let cases = [
        ("res2net50", 883_806usize, "0.88M"),
        ("resnet50", 1_053_298, "1.05M"),
        ("resnet34", 1_333_938, "1.33M"),
    ];
    for (arch, total, millions) in cases {
        let out = run(&["params", "--arch", arch]);
        assert_eq!(out.status, 0, "{arch}: {}", out.stderr);
        assert!(
            out.stdout.contains(&format!("({millions})")),
            "{arch} should report {millions}: {}",
            out.stdout
        );
        // Section rows must sum to the reported total, exactly.
        let mut sum = 0usize;
        let mut reported = None;
        for line in out.stdout.lines() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["arch", _] => {}
                ["total", value, _millions] => reported = Some(value.parse::<usize>().unwrap()),
                [_, value] => sum += value.parse::<usize>().unwrap(),
                _ => {}
            }
        }
        assert_eq!(reported, Some(total), "{arch} total");
        assert_eq!(sum, total, "{arch} sections must sum to the total");
    }
}

#[test]
fn extract_reports_shapes_skips_current_cache_and_fails_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tone_dataset(dir.path(), "clip", 10);
    let cache = dir.path().join("cache");

    let args = [
        "extract",
        "--manifest",
        &s(&manifest),
        "--feature",
        "spec",
        "--cache-dir",
        &s(&cache),
    ];
    let first = run(&args);
    assert_eq!(first.status, 0, "{}", first.stderr);
    assert!(
        first.stdout.contains("extracted=10 skipped=0 failed=0")
            && first.stdout.contains("bins=257")
            && first.stdout.contains("frames=400"),
        "{}",
        first.stdout
    );

    // Unchanged input: nothing recomputed.
    let second = run(&args);
    assert_eq!(second.status, 0);
    assert!(
        second.stdout.contains("extracted=0 skipped=10"),
        "{}",
        second.stdout
    );

    // The cached matrix equals an independent recomputation, bit for bit.
    let cached = load_feature(&cache.join("spec/clip03.feat")).unwrap();
    let clip = read_wav_pcm16_mono(&dir.path().join("wav/clip03.wav")).unwrap();
    let direct = fix_frames(&extract(&clip, FeatureKind::Spec).unwrap(), 400).unwrap();
    assert_eq!(cached, direct);

    // A malformed WAV is reported per file and fails the command.
    std::fs::write(dir.path().join("wav/clip07.wav"), b"not audio").unwrap();
    std::fs::remove_file(cache.join("spec/clip07.feat")).unwrap();
    let third = run(&args);
    assert_eq!(third.status, 2);
    assert!(third.stdout.contains("failed=1"), "{}", third.stdout);
    assert!(third.stderr.contains("clip07"), "{}", third.stderr);
}

/// Zeroes every parameter in the classifier head.
struct ZeroHead;
impl Visitor<f32> for ZeroHead {
    fn param(&mut self, p: &mut Param<f32>) {
        if p.name.starts_with("head.") {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
    }
    fn buffer(&mut self, _name: &str, _value: &mut Tensor<f32>) {}
}

#[test]
fn zero_head_checkpoint_scores_every_utterance_at_ln_half() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tone_dataset(dir.path(), "utt", 3);
    let cache = dir.path().join("cache");
    let frames = 50usize;

    let extract_out = run(&[
        "extract",
        "--manifest",
        &s(&manifest),
        "--feature",
        "lfcc",
        "--frames",
        "50",
        "--cache-dir",
        &s(&cache),
    ]);
    assert_eq!(extract_out.status, 0, "{}", extract_out.stderr);

    // With the head weights and bias at zero the logits are (0, 0), so the
    // bonafide log-probability is exactly ln(1/2) for any input.
    let ckpt = dir.path().join("zero_head.ckpt");
    let mut model = build_model::<f32>(&ModelConfig::for_arch(ArchId::TinySeRes2Net50), 1).unwrap();
    model.visit(&mut ZeroHead);
    let meta = |v: f64| Tensor::<f32>::new(vec![1], vec![v as f32]).unwrap();
    let extras = vec![
        (META_FEATURE.to_string(), meta(FeatureKind::Lfcc.tag() as f64)),
        (META_FRAMES.to_string(), meta(frames as f64)),
    ];
    save_model(&ckpt, &mut model, &extras, 0).unwrap();

    let scores_path = dir.path().join("scores.txt");
    let score_out = run(&[
        "score",
        "--checkpoint",
        &s(&ckpt),
        "--manifest",
        &s(&manifest),
        "--cache-dir",
        &s(&cache),
        "--out",
        &s(&scores_path),
    ]);
    assert_eq!(score_out.status, 0, "{}", score_out.stderr);

    let text = std::fs::read_to_string(&scores_path).unwrap();
    let mut lines = text.lines();
    assert!(
        lines.next().unwrap().starts_with("# config "),
        "score files carry the producing config hash"
    );
    let expected = 0.5f64.ln();
    let mut ids = Vec::new();
    for line in lines {
        let (id, value) = line.split_once(' ').unwrap();
        ids.push(id.to_string());
        let score: f64 = value.parse().unwrap();
        assert!(score <= 0.0, "scores are log-probabilities");
        assert!(
            (score - expected).abs() < 1e-6,
            "{id}: {score} vs ln(1/2) = {expected}"
        );
    }
    assert_eq!(ids, ["utt00", "utt01", "utt02"], "manifest order");

    // Binding checks: wrong front-end or architecture is refused.
    let wrong_feature = run(&[
        "score",
        "--checkpoint",
        &s(&ckpt),
        "--manifest",
        &s(&manifest),
        "--cache-dir",
        &s(&cache),
        "--feature",
        "spec",
        "--out",
        &s(&scores_path),
    ]);
    assert_eq!(wrong_feature.status, 2);
    assert!(wrong_feature.stderr.contains("does not match"), "{}", wrong_feature.stderr);

    let wrong_arch = run(&[
        "score",
        "--checkpoint",
        &s(&ckpt),
        "--manifest",
        &s(&manifest),
        "--cache-dir",
        &s(&cache),
        "--arch",
        "resnet34",
        "--out",
        &s(&scores_path),
    ]);
    assert_eq!(wrong_arch.status, 2);

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"????definitely not a checkpoint").unwrap();
    let bad = run(&[
        "score",
        "--checkpoint",
        &s(&garbage),
        "--manifest",
        &s(&manifest),
        "--cache-dir",
        &s(&cache),
        "--out",
        &s(&scores_path),
    ]);
    assert_eq!(bad.status, 2);
}

#[test]
fn evaluate_prints_pooled_metrics_and_per_attack_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.txt");
    let protocol = dir.path().join("protocol.txt");

    // Perfectly separated: both metrics vanish.
    std::fs::write(&scores, "b1 2.0\nb2 1.0\ns1 -1.0\ns2 -2.0\n").unwrap();
    std::fs::write(
        &protocol,
        "b1 bonafide -\nb2 bonafide -\ns1 spoof A01\ns2 spoof A02\n",
    )
    .unwrap();
    let out = run(&["evaluate", "--scores", &s(&scores), "--protocol", &s(&protocol)]);
    assert_eq!(out.status, 0, "{}", out.stderr);
    let mut lines = out.stdout.lines();
    assert_eq!(lines.next(), Some("EER 0.0000% t-DCF 0.0000"));
    assert_eq!(lines.next(), Some("attack A01 EER 0.0000%"));
    assert_eq!(lines.next(), Some("attack A02 EER 0.0000%"));

    // Fully interleaved: EER 50%, and the best threshold rejects everything
    // (cost = c_miss), so the normalized minimum cost is 1.
    std::fs::write(&scores, "b1 0.0\nb2 2.0\ns1 1.0\ns2 3.0\n").unwrap();
    std::fs::write(
        &protocol,
        "b1 bonafide -\nb2 bonafide -\ns1 spoof -\ns2 spoof -\n",
    )
    .unwrap();
    let out = run(&["evaluate", "--scores", &s(&scores), "--protocol", &s(&protocol)]);
    assert_eq!(out.status, 0);
    assert_eq!(out.stdout.trim(), "EER 50.0000% t-DCF 1.0000");

    // A scored utterance missing from the protocol is an error.
    std::fs::write(&scores, "b1 0.0\nzz 1.0\n").unwrap();
    let out = run(&["evaluate", "--scores", &s(&scores), "--protocol", &s(&protocol)]);
    assert_eq!(out.status, 2);
    assert!(out.stderr.contains("zz"), "{}", out.stderr);

    // Degenerate costs are refused.
    std::fs::write(&scores, "b1 0.0\nb2 2.0\ns1 1.0\ns2 3.0\n").unwrap();
    let out = run(&[
        "evaluate",
        "--scores",
        &s(&scores),
        "--protocol",
        &s(&protocol),
        "--c-miss",
        "0.0",
    ]);
    assert_eq!(out.status, 2);
}

#[test]
fn fuse_averages_per_utterance_and_rejects_mismatched_sets() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |name: &str, body: &str| -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let a = mk("a.txt", "u1 1.0\nu2 -4.0\nu3 0.5\n");
    let b = mk("b.txt", "u3 0.25\nu1 2.0\nu2 -5.0\n"); // shuffled order
    let c = mk("c.txt", "u1 3.0\nu2 -6.0\nu3 0.75\n");
    let fused_path = dir.path().join("fused.txt");

    let out = run(&["fuse", "--out", &s(&fused_path), &s(&a), &s(&b), &s(&c)]);
    assert_eq!(out.status, 0, "{}", out.stderr);
    assert!(out.stdout.contains("fused=3 systems=3"), "{}", out.stdout);

    let text = std::fs::read_to_string(&fused_path).unwrap();
    let values: Vec<(String, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (id, v) = l.split_once(' ').unwrap();
            (id.to_string(), v.parse().unwrap())
        })
        .collect();
    // Output follows the first file's order; values are exact means.
    assert_eq!(values[0], ("u1".to_string(), 2.0));
    assert_eq!(values[1], ("u2".to_string(), -5.0));
    assert_eq!(values[2], ("u3".to_string(), 0.5));

    // Fusing one file must not change evaluation results.
    let protocol = mk("protocol.txt", "u1 bonafide\nu2 spoof\nu3 spoof\n");
    let single = dir.path().join("single.txt");
    let out = run(&["fuse", "--out", &s(&single), &s(&a)]);
    assert_eq!(out.status, 0);
    let eval_orig = run(&["evaluate", "--scores", &s(&a), "--protocol", &s(&protocol)]);
    let eval_fused = run(&["evaluate", "--scores", &s(&single), "--protocol", &s(&protocol)]);
    assert_eq!(eval_orig.stdout, eval_fused.stdout);

    // Mismatched id sets name the difference.
    let d = mk("d.txt", "u1 0.0\nu4 1.0\n");
    let out = run(&["fuse", "--out", &s(&fused_path), &s(&a), &s(&d)]);
    assert_eq!(out.status, 2);
    assert!(out.stderr.contains("u4"), "{}", out.stderr);
}

#[test]
fn train_logs_one_line_per_epoch_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let train_manifest = tone_dataset(dir.path(), "tr", 8);
    let dev_manifest = tone_dataset(dir.path(), "dv", 4);
    let cache = dir.path().join("cache");
    for m in [&train_manifest, &dev_manifest] {
        let out = run(&[
            "extract",
            "--manifest",
            &s(m),
            "--feature",
            "lfcc",
            "--frames",
            "50",
            "--cache-dir",
            &s(&cache),
        ]);
        assert_eq!(out.status, 0, "{}", out.stderr);
    }

    // Config file provides the run; --epochs exercises flag precedence.
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "arch = tiny_se_res2net50\nfeature = lfcc\nframes = 50\nepochs = 9\n\
         warmup_steps = 4\nbatch_size = 4\nlr_peak = 5e-3\nseed = 3\n",
    )
    .unwrap();

    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("train.log");
    let args = [
        "train",
        "--manifest",
        &s(&train_manifest),
        "--dev-manifest",
        &s(&dev_manifest),
        "--config",
        &s(&cfg),
        "--cache-dir",
        &s(&cache),
        "--epochs",
        "2",
        "--out",
        &s(&ckpt),
        "--log",
        &s(&log),
    ];
    let out = run(&args);
    assert_eq!(out.status, 0, "{}", out.stderr);

    let epoch_lines: Vec<&str> = out
        .stdout
        .lines()
        .filter(|l| l.starts_with("epoch="))
        .collect();
    assert_eq!(epoch_lines.len(), 2, "one log line per epoch:\n{}", out.stdout);
    for line in &epoch_lines {
        for key in ["epoch=", "loss=", "lr=", "dev_eer="] {
            assert!(line.contains(key), "{line}");
        }
    }
    let logged = std::fs::read_to_string(&log).unwrap();
    assert_eq!(
        logged.lines().collect::<Vec<_>>(),
        epoch_lines,
        "log file mirrors the stdout epoch lines"
    );

    // Same config, same bytes.
    let first = std::fs::read(&ckpt).unwrap();
    let rerun = run(&args);
    assert_eq!(rerun.status, 0);
    assert_eq!(first, std::fs::read(&ckpt).unwrap(), "checkpoint determinism");

    // Overlapping partitions are refused.
    let out = run(&[
        "train",
        "--manifest",
        &s(&train_manifest),
        "--dev-manifest",
        &s(&train_manifest),
        "--config",
        &s(&cfg),
        "--cache-dir",
        &s(&cache),
        "--out",
        &s(&ckpt),
    ]);
    assert_eq!(out.status, 2);
    assert!(out.stderr.contains("both train and dev"), "{}", out.stderr);

    // Missing cache entries are enumerated.
    let out = run(&[
        "train",
        "--manifest",
        &s(&train_manifest),
        "--dev-manifest",
        &s(&dev_manifest),
        "--config",
        &s(&cfg),
        "--cache-dir",
        &s(&dir.path().join("empty_cache")),
        "--out",
        &s(&ckpt),
    ]);
    assert_eq!(out.status, 2);
    assert!(out.stderr.contains("run extract first"), "{}", out.stderr);
    assert!(out.stderr.contains("tr00"), "{}", out.stderr);

    // A non-finite feature value aborts with the numeric exit code.
    let poisoned = FeatureMatrix::new(
        FeatureKind::Lfcc,
        60,
        50,
        (0..60 * 50)
            .map(|i| if i == 123 { f32::NAN } else { 0.25 })
            .collect(),
    )
    .unwrap();
    res2spoof::features::save_feature(&cache.join("lfcc/tr03.feat"), &poisoned).unwrap();
    let out = run(&args);
    assert_eq!(out.status, 3, "{}", out.stderr);
    assert!(out.stderr.contains("non-finite"), "{}", out.stderr);
}

#[test]
fn synth_writes_a_complete_loadable_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("toy");
    let out = run(&["synth", "--out", &s(&out_dir), "--seed", "5"]);
    assert_eq!(out.status, 0, "{}", out.stderr);
    assert!(out.stdout.contains("wavs=112"), "{}", out.stdout);

    let lines = |name: &str| {
        std::fs::read_to_string(out_dir.join(name))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("train.txt"), 64);
    assert_eq!(lines("dev.txt"), 16);
    assert_eq!(lines("eval.txt"), 32);
    assert_eq!(lines("protocol.txt"), 112);
    assert_eq!(lines("wav/challenge_demo.txt"), 5);
    assert!(out_dir.join("toy.cfg").is_file());
    assert_eq!(
        std::fs::read_dir(out_dir.join("wav"))
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "wav")
            })
            .count(),
        112
    );

    // The shipped config drives extraction as-is.
    let extract_out = run(&[
        "extract",
        "--manifest",
        &s(&out_dir.join("dev.txt")),
        "--config",
        &s(&out_dir.join("toy.cfg")),
        "--cache-dir",
        &s(&out_dir.join("cache")),
    ]);
    assert_eq!(extract_out.status, 0, "{}", extract_out.stderr);
    assert!(
        extract_out.stdout.contains("extracted=16"),
        "{}",
        extract_out.stdout
    );
}

//! `res2spoof` — train and evaluate anti-spoofing countermeasure models
//! on WAV datasets described by plain-text manifests.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration/data error,
//! 3 numeric failure (non-finite values where finite ones are required).

mod commands;
mod manifest;
mod runconfig;
mod synth;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use res2spoof::error::{Error, Result};
use res2spoof::features::FeatureKind;
use res2spoof::metrics::TdcfCosts;
use res2spoof::model::ArchId;
use runconfig::RunConfig;

fn parse_feature(s: &str) -> std::result::Result<FeatureKind, String> {
    FeatureKind::from_name(s).map_err(|e| e.to_string())
}

fn parse_arch(s: &str) -> std::result::Result<ArchId, String> {
    ArchId::from_name(s).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(
    name = "res2spoof",
    version,
    about = "Audio anti-spoofing countermeasures: multi-scale residual networks \
             over spectrogram, LFCC, or constant-Q front-ends"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that reads or writes the feature cache.
/// Explicit flags override the `--config` file, which overrides defaults.
#[derive(Args)]
struct ConfigFlags {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Acoustic front-end.
    #[arg(long, value_parser = parse_feature)]
    feature: Option<FeatureKind>,
    /// Frames per cached matrix (longer clips truncated, shorter tiled).
    #[arg(long)]
    frames: Option<usize>,
    /// Directory for cached feature matrices.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(feature) = self.feature {
            cfg.feature = feature;
        }
        if let Some(frames) = self.frames {
            cfg.frames = frames;
        }
        if let Some(dir) = &self.cache_dir {
            cfg.cache_dir = dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainFlags {
    /// Model architecture.
    #[arg(long, value_parser = parse_arch)]
    arch: Option<ArchId>,
    /// Seed for weight init and batch shuffling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Steps of linear learning-rate warmup before inverse-sqrt decay.
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate at the end of warmup.
    #[arg(long)]
    lr_peak: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(arch) = self.arch {
            cfg.arch = arch;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(warmup) = self.warmup_steps {
            cfg.train.warmup_steps = warmup;
        }
        if let Some(batch) = self.batch_size {
            cfg.train.batch_size = batch;
        }
        if let Some(lr) = self.lr_peak {
            cfg.train.lr_peak = lr;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache features for every utterance in a manifest.
    Extract {
        /// Utterance list: `utt_id wav_path [label [attack]]` lines, or the
        /// 5-column challenge protocol layout (auto-detected).
        #[arg(long)]
        manifest: PathBuf,
        /// Directory audio paths are relative to (default: the manifest's).
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
        /// Worker threads (default: one per CPU).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train a model; keeps the epoch with the best dev EER.
    Train {
        /// Training-partition manifest (labels required).
        #[arg(long)]
        manifest: PathBuf,
        /// Development-partition manifest (labels required).
        #[arg(long)]
        dev_manifest: PathBuf,
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-epoch log lines to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score utterances with a trained checkpoint (higher = more bonafide).
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
        /// Cross-check: fail unless the checkpoint was trained with this
        /// architecture (it is otherwise auto-detected).
        #[arg(long, value_parser = parse_arch)]
        arch: Option<ArchId>,
        /// Score file output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Report EER and the normalized minimum detection cost for a score file.
    Evaluate {
        /// Score file (`utt_id score` lines).
        #[arg(long)]
        scores: PathBuf,
        /// Ground truth: `utt_id label [attack]` lines.
        #[arg(long)]
        protocol: PathBuf,
        /// Cost of rejecting a bonafide trial.
        #[arg(long, default_value_t = 1.0)]
        c_miss: f64,
        /// Cost of accepting a spoofed trial.
        #[arg(long, default_value_t = 10.0)]
        c_fa: f64,
    },
    /// Average several systems' scores per utterance.
    Fuse {
        /// Fused score file output path.
        #[arg(long)]
        out: PathBuf,
        /// Input score files (same utterance set in each).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print per-section and total parameter counts for an architecture.
    Params {
        #[arg(long, value_parser = parse_arch)]
        arch: ArchId,
    },
    /// Generate the synthetic toy dataset (tones vs. filtered noise).
    Synth {
        /// Output directory (WAVs, manifests, protocol, config).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract {
            manifest,
            root,
            config,
            jobs,
        } => {
            let cfg = config.resolve()?;
            commands::cmd_extract(&manifest, root.as_deref(), &cfg, jobs)
        }
        Command::Train {
            manifest,
            dev_manifest,
            root,
            config,
            train,
            out,
            log,
        } => {
            let mut cfg = config.resolve()?;
            train.apply(&mut cfg);
            commands::cmd_train(
                &cfg,
                &manifest,
                &dev_manifest,
                root.as_deref(),
                &out,
                log.as_deref(),
            )
        }
        Command::Score {
            checkpoint,
            manifest,
            root,
            config,
            arch,
            out,
            jobs,
        } => {
            let feature_flag = config.feature;
            let cfg = config.resolve()?;
            commands::cmd_score(
                &checkpoint,
                &manifest,
                root.as_deref(),
                &cfg,
                arch,
                feature_flag,
                &out,
                jobs,
            )
        }
        Command::Evaluate {
            scores,
            protocol,
            c_miss,
            c_fa,
        } => commands::cmd_evaluate(&scores, &protocol, &TdcfCosts { c_miss, c_fa }),
        Command::Fuse { out, inputs } => commands::cmd_fuse(&inputs, &out),
        Command::Params { arch } => commands::cmd_params(arch),
        Command::Synth { out, seed } => {
            let summary = synth::generate(&out, seed)?;
            println!(
                "wavs={} out={} (manifests: train.txt dev.txt eval.txt; protocol.txt; toy.cfg)",
                summary.wav_count,
                summary.out_dir.display()
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Numeric(_) => 3,
            _ => 2,
        });
    }
}

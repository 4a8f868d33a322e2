//! Run configuration: one flat `key=value` file (no sections, no nesting)
//! merged over built-in defaults, then overridden by explicit CLI flags.
//!
//! Grammar per line: `key = value` (whitespace around `=` optional);
//! blank lines and `#` comments are ignored; keys may appear once.

use std::path::{Path, PathBuf};

use res2spoof::error::{Error, Result};
use res2spoof::features::{FeatureKind, TARGET_FRAMES};
use res2spoof::model::{ArchId, ModelConfig};
use res2spoof::train::TrainConfig;
use res2spoof::util::fnv1a64;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub feature: FeatureKind,
    pub arch: ArchId,
    pub train: TrainConfig,
    /// Every cached feature matrix is truncated/tiled to this many frames.
    pub frames: usize,
    pub cache_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            feature: FeatureKind::Lfcc,
            arch: ArchId::SeRes2Net50,
            train: TrainConfig::default(),
            frames: TARGET_FRAMES,
            cache_dir: PathBuf::from("cache"),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the file's keys.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    path.display(),
                    lineno
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    lineno
                )));
            }
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), lineno)))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "feature" => self.feature = FeatureKind::from_name(value)?,
            "arch" => self.arch = ArchId::from_name(value)?,
            "frames" => self.frames = num(key, value)?,
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "epochs" => self.train.epochs = num(key, value)?,
            "warmup_steps" => self.train.warmup_steps = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "lr_peak" => self.train.lr_peak = num(key, value)?,
            "weight_decay" => self.train.weight_decay = num(key, value)?,
            "adam_beta1" => self.train.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.train.adam_beta2 = num(key, value)?,
            "adam_eps" => self.train.adam_eps = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            other => {
                return Err(Error::config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::config("frames must be >= 1"));
        }
        self.train.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::for_arch(self.arch)
    }

    /// Hash binding the model architecture to the front-end it was trained
    /// on; embedded in score files so downstream tools can detect mixups.
    pub fn output_hash(&self) -> u64 {
        let text = format!(
            "{:016x}:{:016x}:frames={}",
            self.model_config().config_hash(),
            self.feature.config_hash(),
            self.frames
        );
        fnv1a64(text.as_bytes())
    }

    /// Directory holding this front-end's cached matrices.
    pub fn feature_cache_dir(&self) -> PathBuf {
        self.cache_dir.join(self.feature.name())
    }
}

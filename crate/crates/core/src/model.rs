//! The model zoo: narrow residual classifiers over time-frequency features.
//!
//! All architectures share one skeleton — a stem that downsamples the input
//! 4x, four residual stages of bracket widths 16/32/64/128 with repeats
//! 3/4/6/3 (the first block of stages 2..4 strides), global pooling, and a
//! two-class fully connected head (class 0 = spoof, class 1 = bonafide):
//!
//! | name                 | blocks      | stem      | pooling    |
//! |----------------------|-------------|-----------|------------|
//! | `resnet34`           | basic       | 7x7       | average    |
//! | `se_resnet34`        | basic+SE    | 7x7       | average    |
//! | `resnet50`           | bottleneck  | 7x7       | average    |
//! | `se_resnet50`        | bottleneck+SE | 7x7     | average    |
//! | `res2net50`          | res2net     | deep 3x3  | average    |
//! | `se_res2net50`       | res2net+SE  | deep 3x3  | average    |
//! | `stat_se_res2net50`  | res2net+SE  | deep 3x3  | mean+std   |
//!
//! Res2net stages use hierarchy groups of `floor(width*26/64)` channels
//! (the reference res2net width rule), making the hidden width of each block
//! `group*scale` — slightly wider than the bracket width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{build_block, BlockKind, BlockSpec};
use crate::error::{Error, Result};
use crate::nn::{
    ActivationLayer, BatchNorm2d, Conv2d, Layer, Linear, Mode, Param, ParamCounter, Pool2d,
    Sequential, Visitor, ZeroGrads,
};
use crate::ops::{log_softmax, GlobalPoolKind, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::fnv1a64;

/// Squeeze-and-excitation reduction ratio used across the zoo.
pub const SE_RATIO: usize = 16;
/// Res2net hierarchy scale used across the zoo.
pub const RES2NET_SCALE: usize = 4;
/// Numerator of the reference res2net group-width rule
/// `group = floor(width * 26 / 64)`.
pub const RES2NET_BASE_WIDTH: usize = 26;

/// Hierarchy group width for a zoo res2net stage of the given bracket width.
pub fn zoo_group_width(width: usize) -> usize {
    width * RES2NET_BASE_WIDTH / 64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchId {
    ResNet34,
    SeResNet34,
    ResNet50,
    SeResNet50,
    Res2Net50,
    SeRes2Net50,
    StatSeRes2Net50,
    /// Miniature clone of `se_res2net50` (widths 4, repeats 1) for gradient
    /// checks and end-to-end smoke training, where the full models are far
    /// too slow.
    TinySeRes2Net50,
}

impl ArchId {
    /// The seven full-size architectures (excludes the tiny clone).
    pub const STANDARD: [ArchId; 7] = [
        ArchId::ResNet34,
        ArchId::SeResNet34,
        ArchId::ResNet50,
        ArchId::SeResNet50,
        ArchId::Res2Net50,
        ArchId::SeRes2Net50,
        ArchId::StatSeRes2Net50,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ArchId::ResNet34 => "resnet34",
            ArchId::SeResNet34 => "se_resnet34",
            ArchId::ResNet50 => "resnet50",
            ArchId::SeResNet50 => "se_resnet50",
            ArchId::Res2Net50 => "res2net50",
            ArchId::SeRes2Net50 => "se_res2net50",
            ArchId::StatSeRes2Net50 => "stat_se_res2net50",
            ArchId::TinySeRes2Net50 => "tiny_se_res2net50",
        }
    }

    pub fn from_name(name: &str) -> Result<ArchId> {
        match name {
            "resnet34" => Ok(ArchId::ResNet34),
            "se_resnet34" => Ok(ArchId::SeResNet34),
            "resnet50" => Ok(ArchId::ResNet50),
            "se_resnet50" => Ok(ArchId::SeResNet50),
            "res2net50" => Ok(ArchId::Res2Net50),
            "se_res2net50" => Ok(ArchId::SeRes2Net50),
            "stat_se_res2net50" => Ok(ArchId::StatSeRes2Net50),
            "tiny_se_res2net50" => Ok(ArchId::TinySeRes2Net50),
            other => Err(Error::config(format!("unknown architecture: {other}"))),
        }
    }
}

/// Stem flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemKind {
    /// Single 7x7 stride-2 conv, then 3x3 stride-2 max pool.
    Conv7,
    /// Three stride-1 3x3 convs (each BN+ReLU), then 3x3 stride-2 max pool
    /// (the "deep stem" used by the res2net variants).
    Deep3x3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadPool {
    Avg,
    MeanStd,
}

/// One residual stage: `repeat` blocks of the same kind and width; the
/// first block takes the incoming channel count (and the stage's stride),
/// the rest run at `width*expansion`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageConfig {
    pub kind: BlockKind,
    pub width: usize,
    pub repeat: usize,
    pub scale: usize,
    pub group_width: Option<usize>,
    pub se_ratio: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: ArchId,
    pub input_channels: usize,
    pub stem: StemKind,
    pub stem_width: usize,
    pub stages: Vec<StageConfig>,
    pub head_pool: HeadPool,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn for_arch(arch: ArchId) -> ModelConfig {
        let widths = [16usize, 32, 64, 128];
        let repeats = [3usize, 4, 6, 3];
        let tiny = arch == ArchId::TinySeRes2Net50;
        let (kind, se, stem) = match arch {
            ArchId::ResNet34 => (BlockKind::Basic, None, StemKind::Conv7),
            ArchId::SeResNet34 => (BlockKind::Basic, Some(SE_RATIO), StemKind::Conv7),
            ArchId::ResNet50 => (BlockKind::Bottleneck, None, StemKind::Conv7),
            ArchId::SeResNet50 => (BlockKind::Bottleneck, Some(SE_RATIO), StemKind::Conv7),
            ArchId::Res2Net50 => (BlockKind::Res2Net, None, StemKind::Deep3x3),
            ArchId::SeRes2Net50 | ArchId::StatSeRes2Net50 | ArchId::TinySeRes2Net50 => {
                (BlockKind::Res2Net, Some(SE_RATIO), StemKind::Deep3x3)
            }
        };
        let stages = (0..4)
            .map(|i| {
                let width = if tiny { 4 } else { widths[i] };
                StageConfig {
                    kind,
                    width,
                    repeat: if tiny { 1 } else { repeats[i] },
                    scale: if kind == BlockKind::Res2Net { RES2NET_SCALE } else { 1 },
                    group_width: (kind == BlockKind::Res2Net && !tiny)
                        .then(|| zoo_group_width(width)),
                    se_ratio: se,
                }
            })
            .collect();
        ModelConfig {
            arch,
            input_channels: 1,
            stem,
            stem_width: if tiny { 4 } else { 16 },
            stages,
            head_pool: if arch == ArchId::StatSeRes2Net50 {
                HeadPool::MeanStd
            } else {
                HeadPool::Avg
            },
            num_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.stem_width == 0 || self.num_classes < 2 {
            return Err(Error::config("model: channels and classes must be positive"));
        }
        if self.stages.is_empty() {
            return Err(Error::config("model: at least one stage required"));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.repeat == 0 {
                return Err(Error::config(format!("model: stage {i} has zero blocks")));
            }
            // Validate a representative block spec per stage.
            self.stage_block_spec(i, 0, self.stage_in_channels(i)).validate()?;
        }
        Ok(())
    }

    /// Expansion factor of this config's blocks.
    fn expansion(kind: BlockKind) -> usize {
        match kind {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck | BlockKind::Res2Net => 2,
        }
    }

    /// Channels entering stage `i`.
    fn stage_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.stem_width
        } else {
            let prev = &self.stages[i - 1];
            prev.width * Self::expansion(prev.kind)
        }
    }

    /// Spec of block `b` in stage `i` given the incoming channel count.
    fn stage_block_spec(&self, i: usize, b: usize, in_channels: usize) -> BlockSpec {
        let stage = &self.stages[i];
        // Only the first block of stages after the first strides.
        let stride = if i > 0 && b == 0 { 2 } else { 1 };
        let mut spec = match stage.kind {
            BlockKind::Basic => BlockSpec::basic(in_channels, stage.width, stride),
            BlockKind::Bottleneck => BlockSpec::bottleneck(in_channels, stage.width, stride),
            BlockKind::Res2Net => BlockSpec::res2net(in_channels, stage.width, stride, stage.scale),
        };
        if let Some(g) = stage.group_width {
            spec = spec.with_group_width(g);
        }
        if let Some(r) = stage.se_ratio {
            spec = spec.with_se(r);
        }
        spec
    }

    /// Channels produced by the last stage.
    pub fn final_channels(&self) -> usize {
        let last = self.stages.last().expect("validated: non-empty");
        last.width * Self::expansion(last.kind)
    }

    /// Input width of the head's fully connected layer.
    pub fn head_in_features(&self) -> usize {
        match self.head_pool {
            HeadPool::Avg => self.final_channels(),
            HeadPool::MeanStd => 2 * self.final_channels(),
        }
    }

    /// Canonical text form; two configs are interchangeable exactly when
    /// these strings match. Backs [`ModelConfig::config_hash`].
    pub fn canonical_string(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = write!(
            s,
            "arch={};in={};stem={:?};sw={};pool={:?};classes={}",
            self.arch.name(),
            self.input_channels,
            self.stem,
            self.stem_width,
            self.head_pool,
            self.num_classes
        );
        for st in &self.stages {
            let _ = write!(
                s,
                ";stage(kind={:?},w={},r={},s={},g={:?},se={:?})",
                st.kind, st.width, st.repeat, st.scale, st.group_width, st.se_ratio
            );
        }
        s
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.canonical_string().as_bytes())
    }

    /// Closed-form total parameter count (no model construction needed).
    pub fn param_count(&self) -> usize {
        let mut total = match self.stem {
            StemKind::Conv7 => {
                49 * self.input_channels * self.stem_width + 2 * self.stem_width
            }
            StemKind::Deep3x3 => {
                9 * self.input_channels * self.stem_width
                    + 2 * self.stem_width
                    + 2 * (9 * self.stem_width * self.stem_width + 2 * self.stem_width)
            }
        };
        for (i, stage) in self.stages.iter().enumerate() {
            let mut in_ch = self.stage_in_channels(i);
            for b in 0..stage.repeat {
                let spec = self.stage_block_spec(i, b, in_ch);
                total += spec.param_count();
                in_ch = spec.out_channels();
            }
        }
        total += self.head_in_features() * self.num_classes + self.num_classes;
        total
    }
}

/// A built network plus the config that produced it.
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    net: Sequential<T>,
}

/// Construct a model with He-normal weights drawn from a deterministic
/// stream; the same `(config, seed)` always yields bit-identical weights.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new();

    match config.stem {
        StemKind::Conv7 => {
            net.push(Conv2d::new(
                "stem.conv",
                config.input_channels,
                config.stem_width,
                7,
                2,
                3,
                &mut rng,
            ));
            net.push(BatchNorm2d::new("stem.bn", config.stem_width));
            net.push(ActivationLayer::relu());
        }
        StemKind::Deep3x3 => {
            let w = config.stem_width;
            for (idx, in_ch) in [config.input_channels, w, w].into_iter().enumerate() {
                net.push(Conv2d::new(
                    &format!("stem.conv{}", idx + 1),
                    in_ch,
                    w,
                    3,
                    1,
                    1,
                    &mut rng,
                ));
                net.push(BatchNorm2d::new(&format!("stem.bn{}", idx + 1), w));
                net.push(ActivationLayer::relu());
            }
        }
    }
    net.push(Pool2d::new(PoolKind::Max, 3, 2, 1));

    for (i, stage) in config.stages.iter().enumerate() {
        let mut in_ch = config.stage_in_channels(i);
        for b in 0..stage.repeat {
            let spec = config.stage_block_spec(i, b, in_ch);
            // Stage naming follows the bracket convention: the first stage
            // after the stem is "conv2".
            let name = format!("conv{}.b{}", i + 2, b);
            net.push_boxed(build_block::<T, _>(&spec, &name, &mut rng)?);
            in_ch = spec.out_channels();
        }
    }

    net.push(crate::nn::GlobalPool::new(match config.head_pool {
        HeadPool::Avg => GlobalPoolKind::Avg,
        HeadPool::MeanStd => GlobalPoolKind::MeanStd,
    }));
    net.push(Linear::new(
        "head.fc",
        config.head_in_features(),
        config.num_classes,
        &mut rng,
    ));

    Ok(Model {
        config: config.clone(),
        net,
    })
}

impl<T: Scalar> Model<T> {
    /// Logits `[N, num_classes]` for a batch `[N, C, F, frames]`.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != 4 || input.dim(1) != self.config.input_channels {
            return Err(Error::config(format!(
                "model: input must be [N,{},F,T], got {:?}",
                self.config.input_channels,
                input.shape()
            )));
        }
        self.net.forward(input, mode)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.backward(grad_logits)
    }

    pub fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        self.net.visit(visitor);
    }

    pub fn zero_grads(&mut self) {
        self.net.visit(&mut ZeroGrads);
    }

    /// Trainable parameter count by enumeration.
    pub fn count_parameters(&mut self) -> usize {
        let mut counter = ParamCounter::default();
        self.net.visit(&mut counter);
        counter.total
    }

    /// Detection score for one utterance `[1, C, F, frames]`: the
    /// log-probability of the bonafide class (class index 1) under the
    /// eval-mode forward pass. Always <= 0; higher means more bonafide.
    pub fn score_bonafide(&mut self, input: &Tensor<T>) -> Result<f64> {
        if input.rank() != 4 || input.dim(0) != 1 {
            return Err(Error::config(format!(
                "score_bonafide: expected a single utterance [1,C,F,T], got {:?}",
                input.shape()
            )));
        }
        let logits = self.forward(input, Mode::Eval)?;
        logits.assert_finite("model logits")?;
        let log_probs = log_softmax(&logits)?;
        Ok(log_probs.at2(0, 1).as_f64())
    }

    /// Parameter totals grouped by top-level section (stem, conv2..conv5,
    /// head), in network order.
    pub fn section_param_table(&mut self) -> Vec<(String, usize)> {
        struct Grouper {
            rows: Vec<(String, usize)>,
        }
        impl<T: Scalar> Visitor<T> for Grouper {
            fn param(&mut self, p: &mut Param<T>) {
                let section = p.name.split('.').next().unwrap_or("?").to_string();
                match self.rows.last_mut() {
                    Some((name, count)) if *name == section => *count += p.numel(),
                    _ => self.rows.push((section, p.numel())),
                }
            }
        }
        let mut g = Grouper { rows: Vec::new() };
        self.net.visit(&mut g);
        g.rows
    }
}

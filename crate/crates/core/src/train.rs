//! Training loop: Adam with warmup/inverse-square-root learning-rate
//! schedule, seeded shuffling, and best-dev-EER model selection.
//!
//! One optimizer thread owns the model; everything here is single-threaded
//! and deterministic given [`TrainConfig::seed`]. After every epoch the dev
//! split is scored (one utterance at a time, in eval mode) and the
//! parameters with the lowest dev EER so far are kept; ties go to the
//! earlier epoch. A non-finite loss aborts with a diagnostic instead of
//! training onward from poisoned state.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::NamedTensors;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::{eer_from_scores, Label};
use crate::model::Model;
use crate::nn::{Mode, Param, Restore, Snapshot, Visitor};
use crate::ops::{softmax_xent, softmax_xent_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Hyperparameters of the optimizer, schedule, and loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// L2 term added to the gradient before the moment updates; at the
    /// default magnitude it is numerically negligible but kept literal.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Learning rate at the end of warmup (the schedule's maximum).
    pub lr_peak: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            warmup_steps: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            weight_decay: 1e-9,
            batch_size: 32,
            lr_peak: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.warmup_steps == 0 {
            return Err(Error::config(
                "epochs, batch_size and warmup_steps must be >= 1",
            ));
        }
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::config(format!("lr_peak must be positive, got {}", self.lr_peak)));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must be in [0,1), got {v}")));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::config("adam_eps must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Learning rate at optimizer step `step` (1-based): linear warmup to
/// `lr_peak`, then inverse-square-root decay; continuous at the junction.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    assert!(step >= 1, "lr_schedule is defined for steps >= 1");
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    cfg.lr_peak * (s / w).min((w / s).sqrt())
}

/// Per-parameter first/second moment buffers plus the shared step counter.
pub struct AdamState<T> {
    step: u64,
    moments: HashMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Rebuild state saved in a checkpoint: moment tensors keyed by
    /// parameter name (see [`crate::checkpoint::ADAM_M_SUFFIX`]).
    pub fn from_parts(step: u64, moments: HashMap<String, (Tensor<T>, Tensor<T>)>) -> Self {
        AdamState { step, moments }
    }

    /// Export `(name, m, v)` triples, sorted by name for stable output.
    pub fn export(&self) -> Vec<(String, Tensor<T>, Tensor<T>)> {
        let mut out: Vec<_> = self
            .moments
            .iter()
            .map(|(n, (m, v))| (n.clone(), m.clone(), v.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Apply one bias-corrected Adam update to every parameter of `model`
    /// using its accumulated gradients and the supplied learning rate.
    pub fn apply(&mut self, model: &mut Model<T>, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let mut visitor = AdamVisitor {
            state: self,
            lr,
            cfg,
        };
        model.visit(&mut visitor);
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

struct AdamVisitor<'a, T> {
    state: &'a mut AdamState<T>,
    lr: f64,
    cfg: &'a TrainConfig,
}

impl<'a, T: Scalar> Visitor<T> for AdamVisitor<'a, T> {
    fn param(&mut self, param: &mut Param<T>) {
        let (m, v) = self
            .state
            .moments
            .entry(param.name.clone())
            .or_insert_with(|| {
                (
                    Tensor::zeros(param.value.shape()),
                    Tensor::zeros(param.value.shape()),
                )
            });
        adam_update_inplace(
            &mut param.value,
            &param.grad,
            m,
            v,
            self.state.step,
            self.lr,
            self.cfg,
        );
    }
}

/// One Adam update on a single tensor: `g' = g + weight_decay * theta`,
/// moment EMAs, bias correction by step `t` (1-based), then
/// `theta -= lr * m_hat / (sqrt(v_hat) + eps)`. Arithmetic runs in f64.
pub fn adam_update_inplace<T: Scalar>(
    value: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) {
    debug_assert!(t >= 1);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let params = value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut()));
    for ((theta_slot, &g_raw), (m_slot, v_slot)) in params {
        let theta = theta_slot.as_f64();
        let g = g_raw.as_f64() + cfg.weight_decay * theta;
        let mi = b1 * m_slot.as_f64() + (1.0 - b1) * g;
        let vi = b2 * v_slot.as_f64() + (1.0 - b2) * g * g;
        *m_slot = T::from_f64(mi);
        *v_slot = T::from_f64(vi);
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        *theta_slot = T::from_f64(theta - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps));
    }
}

/// One labeled utterance with its extracted (frame-normalized) features.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub utt_id: String,
    pub features: FeatureMatrix,
    pub label: Label,
}

/// Per-epoch log line material.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
    pub dev_eer: f64,
}

/// Result of [`train`]: the model is left holding the best-epoch weights.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_dev_eer: f64,
    /// Total optimizer steps taken.
    pub steps: u64,
}

/// Earliest index of the minimum dev EER (0-based).
pub fn select_best_epoch(dev_eers: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &eer) in dev_eers.iter().enumerate() {
        if best.is_none_or(|b| eer < dev_eers[b]) {
            best = Some(i);
        }
    }
    best
}

/// Stack examples into a `[batch, 1, bins, frames]` input tensor.
pub fn batch_input<T: Scalar>(examples: &[&TrainExample]) -> Result<Tensor<T>> {
    let first = examples
        .first()
        .ok_or_else(|| Error::config("batch_input: empty batch"))?;
    let (bins, frames) = (first.features.bins, first.features.frames);
    for e in examples {
        if e.features.bins != bins || e.features.frames != frames {
            return Err(Error::data(format!(
                "batch_input: {} is {}x{}, expected {bins}x{frames}",
                e.utt_id, e.features.bins, e.features.frames
            )));
        }
    }
    let mut out = Tensor::zeros(&[examples.len(), 1, bins, frames]);
    let data = out.data_mut();
    for (n, e) in examples.iter().enumerate() {
        let base = n * bins * frames;
        for t in 0..frames {
            for f in 0..bins {
                data[base + f * frames + t] = T::from_f64(e.features.at(f, t) as f64);
            }
        }
    }
    Ok(out)
}

fn check_split(name: &str, set: &[TrainExample], need_both_classes: bool) -> Result<()> {
    if set.is_empty() {
        return Err(Error::data(format!("{name} split is empty")));
    }
    if need_both_classes {
        let bona = set.iter().filter(|e| e.label == Label::Bonafide).count();
        if bona == 0 || bona == set.len() {
            return Err(Error::data(format!(
                "{name} split needs both classes for EER ({bona}/{} bonafide)",
                set.len()
            )));
        }
    }
    Ok(())
}

/// Score every example one at a time in eval mode; returns `(eer, scores)`
/// with scores ordered like `set`.
pub fn evaluate_eer<T: Scalar>(
    model: &mut Model<T>,
    set: &[TrainExample],
) -> Result<(f64, Vec<f64>)> {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    let mut scores = Vec::with_capacity(set.len());
    for e in set {
        let score = model.score_bonafide(&e.features.to_input_tensor())?;
        scores.push(score);
        match e.label {
            Label::Bonafide => bona.push(score),
            Label::Spoof => spoof.push(score),
        }
    }
    let (eer, _) = eer_from_scores(&bona, &spoof)?;
    Ok((eer, scores))
}

/// Run the full loop; on return `model` holds the weights of
/// [`TrainOutcome::best_epoch`]. `on_epoch` is invoked after each epoch
/// (for logging) with that epoch's stats.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &[TrainExample],
    dev_set: &[TrainExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_split("train", train_set, false)?;
    check_split("dev", dev_set, true)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut epochs: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, NamedTensors<T>)> = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            // Catch poisoned inputs here: rectifiers map NaN to zero, so a
            // bad value would otherwise vanish instead of surfacing in the
            // loss.
            for e in &batch {
                if let Some(bad) = e.features.values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!(
                        "non-finite feature value ({bad}) in {} at epoch {epoch}, step {}",
                        e.utt_id,
                        adam.step_count() + 1
                    )));
                }
            }
            let input = batch_input::<T>(&batch)?;
            let labels: Vec<usize> = batch.iter().map(|e| e.label.class_index()).collect();

            let logits = model.forward(&input, Mode::Train)?;
            let (loss, log_probs) = softmax_xent(&logits, &labels)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "loss became non-finite ({loss}) at epoch {epoch}, step {}",
                    adam.step_count() + 1
                )));
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();

            model.zero_grads();
            let grad_logits = softmax_xent_backward(&log_probs, &labels)?;
            model.backward(&grad_logits)?;
            lr = lr_schedule(adam.step_count() + 1, cfg);
            adam.apply(model, lr, cfg);
        }

        let (dev_eer, _) = evaluate_eer(model, dev_set)?;
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / seen as f64,
            lr,
            dev_eer,
        };
        on_epoch(&stats);
        epochs.push(stats);

        // Keep the earliest strict minimum.
        if best.as_ref().is_none_or(|(_, e, _)| dev_eer < *e) {
            let mut snap = Snapshot::default();
            model.visit(&mut snap);
            best = Some((epoch, dev_eer, snap.tensors));
        }
    }

    let (best_epoch, best_dev_eer, tensors) = best.expect("epochs >= 1");
    let mut restore = Restore::new(&tensors);
    model.visit(&mut restore);
    debug_assert!(restore.missing.is_empty());
    Ok(TrainOutcome {
        epochs,
        best_epoch,
        best_dev_eer,
        steps: adam.step_count(),
    })
}

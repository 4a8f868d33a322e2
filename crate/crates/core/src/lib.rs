//! Res2Net-style audio anti-spoofing countermeasures, built from scratch.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`ops`]: a minimal dense 4-D tensor engine with explicit
//!   forward/backward pairs for every operator (convolution, pooling, batch
//!   norm, activations, linear, softmax cross-entropy). There is no general
//!   autodiff; the reverse pass is hand-written and verified by finite
//!   differences ([`gradcheck`]).
//! - [`nn`]: stateful layers (weights + forward caches) over those ops, plus
//!   a visitor for enumerating parameters and running statistics.
//! - [`blocks`]: the residual block families — basic, bottleneck, and the
//!   multi-scale "res2net" block with its hierarchical 3x3 group convolutions,
//!   optionally wrapped with squeeze-and-excitation channel gating.
//! - [`model`]: the model zoo (ResNet34/50, Res2Net50, their SE variants and
//!   a statistics-pooling variant) assembled from block stages.
//! - [`features`]: acoustic front-ends — log power spectrogram, LFCC with
//!   deltas, and a constant-Q transform — over 16 kHz PCM16 WAV input.
//! - [`metrics`]: equal error rate, minimum normalized detection cost
//!   (t-DCF style), and score fusion.
//! - [`train`]: Adam with warmup / inverse-square-root decay and the
//!   epoch loop with best-epoch selection on dev EER.
//! - [`checkpoint`]: a small binary format for weights, batch-norm running
//!   statistics and optimizer moments.
//!
//! Everything numeric is generic over [`scalar::Scalar`] so the same code
//! runs in `f32` (training) and `f64` (gradient verification).

pub mod blocks;
pub mod checkpoint;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

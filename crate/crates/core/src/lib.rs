//! Few-shot landmark localization on graph-structured synthetic shapes.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`autodiff`]: dense f64 tensors and a reverse-mode tape
//!   with a small fixed set of differentiable primitives.
//! - [`graph`] / [`model`]: landmark sets, graph topology, and the cascaded
//!   regressor (CNN encoder, global affine stage, local refinement stages).
//! - [`loss`]: hinge-margin global loss, L1 local loss, and a symmetric
//!   channel-softmax divergence between activation maps.
//! - [`optim`] / [`schedule`] / [`ema`] / [`train`]: Adam, step schedules,
//!   teacher weight averaging, and the training strategies (supervised,
//!   teacher-student consistency, pseudo-labeling, pi-model, temporal
//!   ensembling).
//! - [`data`]: procedural shape generator, augmentation, dataset storage.
//! - [`eval`] / [`overlay`] / [`checkpoint`]: metrics, SVG overlays, and a
//!   versioned binary checkpoint format.
//! - [`verification`]: the gradient-check suite exposed to the CLI.
//! - [`experiment`]: end-to-end runs and the multi-strategy comparison table.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod ema;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub(crate) mod kernels;
pub mod loss;
pub mod model;
pub mod optim;
pub mod overlay;
pub mod schedule;
pub mod tensor;
pub mod train;
pub mod verification;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Self-supervised pre-training and budgeted active learning for
//! attention-based classifiers over ragged feature bags.
//!
//! A *bag* is one slide's pre-extracted region-feature matrix (`R x d`,
//! with `R` varying per slide). The library covers the full desk-scale
//! pipeline on such bags:
//!
//! - [`bag`] / [`dataset`]: the bit-exact bag file format, zero-padded
//!   batching with validity masks, and a seeded synthetic generator.
//! - [`augment`]: feature-space view augmentations (flip, crop, zero,
//!   scale, noise).
//! - [`mixing`]: intra-batch span mixing for pre-training plus the
//!   input-level and hidden-state interpolation used in fine-tuning.
//! - [`model`]: the masked transformer aggregator with global attention
//!   pooling, projector and classifier heads, built on a minimal
//!   reverse-mode autodiff tape ([`autodiff`], [`tensor`]) with exact
//!   gradients.
//! - [`losses`]: the cross-correlation pre-training objective, its
//!   three-term mixed total, and mixed-label cross-entropy.
//! - [`optim`]: layer-adaptive momentum SGD with warmup+cosine schedule,
//!   Adam with step decay.
//! - [`active`]: entropy, k-means++, k-center coreset, gradient-embedding,
//!   and symmetric-KL acquisition plus the budgeted selection loop.
//! - [`train`] / [`commands`] / [`config`]: phase drivers and the file-based
//!   run configuration behind the `premix` binary.
//!
//! ## Runnable examples
//!
//! One example per major capability lives in `examples/`:
//!
//! ```bash
//! cargo run -p premix --release --example synthetic_data
//! cargo run -p premix --release --example augmentations
//! cargo run -p premix --release --example slide_mixing
//! cargo run -p premix --release --example gradient_check
//! cargo run -p premix --release --example pretrain
//! cargo run -p premix --release --example finetune
//! cargo run -p premix --release --example active_learning
//! ```
//!
//! The `premix` binary exposes the same pipeline as subcommands
//! (`synth`, `pretrain`, `finetune`, `al`, `eval`); see the README.

pub mod active;
pub mod augment;
pub mod autodiff;
pub mod bag;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mixing;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

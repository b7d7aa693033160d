//! Open-vocabulary optical–SAR segmentation at desk scale.
//!
//! The crate implements a two-stage pipeline. Stage 1 aligns a trainable
//! dense SAR encoder with a frozen dense RGB encoder via multi-scale
//! contrastive (or regression) losses over paired tiles. Stage 2 freezes
//! both dense encoders and trains a text-aligned fusion head: block-specific
//! projections fuse the two modalities, cosine similarity maps against
//! per-class text embeddings are refined and residually fused, and a
//! coarse-to-fine decoder produces per-pixel class logits for any vocabulary,
//! including classes never seen during training.
//!
//! Supporting machinery: a deterministic toy-scene generator with
//! class-coded SAR, synthetic cloud contamination of the optical channel,
//! geometrically consistent paired augmentation, an AdamW trainer with
//! per-group freeze/learning-rate policy and bit-exact checkpoints, and a
//! seen/unseen IoU evaluation harness with ablation grids.
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability. The `sarseg` binary exposes the same functionality as
//! subcommands.

pub mod align;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evalrun;
pub mod fusion;
pub mod graph;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

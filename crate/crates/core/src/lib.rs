//! Multimodal regression of tokamak safety-factor (q) profiles.
//!
//! Each sample couples 141 raw indicator series with a q profile on a fixed
//! normalized-flux grid. The model reads the indicators twice: once as a
//! single concatenated vector through an MLP + attention branch, and once as
//! a stack of rasterized line charts through a CNN + attention branch. A
//! small Transformer fuses the two branch tokens and a linear head regresses
//! the profile under a mean-squared-error loss.
//!
//! Modules, bottom-up:
//! - [`tensor`]: dense tensors with reverse-mode autodiff
//! - [`data`]: record schema, JSONL I/O, splitting, raw vectors, synthetic data
//! - [`charts`]: interval sampling and polyline rasterization
//! - [`model`]: branches, fusion, head, loss
//! - [`train`]: SGD loop, evaluation, metrics, checkpoints
//! - [`study`]: ablation runner
//! - [`gradsuite`]: finite-difference checks for every op and the model
//! - [`cli`]: the `qdist` command line

pub mod charts;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod model;
pub mod study;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! Fairness-constrained model stitching.
//!
//! A trainable affine "stitch" is inserted between frozen blocks of a
//! pretrained network and optimized alone under a differentiable fairness
//! penalty. The crate also provides the last-layer fine-tuning baseline, the
//! unconstrained ERM baseline, a group-fairness metric suite and the
//! experiment driver behind the `fairstitch` binary.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod diffcore;
pub mod error;
pub mod fairloss;
pub mod fairmetrics;
pub mod network;
pub mod pipeline;

pub use error::{Error, Result};

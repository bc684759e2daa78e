//! Learned stage-dependent sample weighting.
//!
//! A strategy model (actor, critic and a learned stage embedding) proposes,
//! for each training stage, the coefficients of a per-sample weighting
//! function `K(f) = 1 + tanh(theta . f + b)`. The reward for a stage is the
//! validation-accuracy difference between a weighted *target* classifier and
//! an unweighted *reference* twin that shares its initialization and data
//! order, so the only source of divergence between the two is the weighting.
//!
//! Module map:
//!
//! - [`nn`]: dense networks, softmax cross-entropy, weighted backward, SGD/Adam.
//! - [`data`]: synthetic datasets, label noise, class imbalance, batch streams.
//! - [`features`]: per-sample features and the per-stage phase descriptor.
//! - [`strategy`]: actor, critic, weighting function, replay buffer, full-buffer updates.
//! - [`episode`]: one twin-network training episode.
//! - [`search`]: lock-step multi-worker search, policy export and replay.
//! - [`analysis`]: uniform/focal baselines, loss-gap and weight-mean series.
//!
//! With the default `parallel` feature, workers are driven through rayon.
//! Disabling it leaves a sequential executor that produces bit-identical results.

// Config checks are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod episode;
pub mod error;
pub mod exec;
pub mod features;
pub mod nn;
pub mod search;
pub mod seed;
pub mod strategy;
pub mod trace;

pub use error::{Error, Result};

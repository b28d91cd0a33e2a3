//! Metric-embedding training built around a differentiable overlap risk.
//!
//! The core idea: embed inputs on the unit sphere, histogram the pairwise
//! negative-cosine distances of same-class and different-class pairs with
//! a soft (triangular-kernel) assignment, and minimize the probability
//! mass of negative pairs sitting at or below positive pairs. That risk is
//! differentiable almost everywhere, so it trains an encoder end to end.
//!
//! The crate ships the pieces separately and a loop that ties them
//! together:
//!
//! - [`linalg`]: dense row-major matrices and vector helpers, `f64` only.
//! - [`rng`]: a small deterministic generator so identical seeds give
//!   byte-identical runs on any platform.
//! - [`pairs`]: validated embedding batches, pair enumeration, distances,
//!   soft histograms and their adjoints.
//! - [`brm`]: the overlap risk, its backward pass, and the variant that
//!   adds a weighted cross-entropy head.
//! - [`baselines`]: contrastive, batch-hard triplet, and lifted-structured
//!   losses on the same distance convention, for comparison runs.
//! - [`encoder`]: a plain MLP with L2-normalized outputs, Adam with step
//!   decay, and binary checkpoints.
//! - [`data`]: synthetic feature and raster generators, augmentation,
//!   class-balanced batch sampling, and the on-disk formats.
//! - [`eval`]: k-NN and retrieval metrics plus a deterministic linear
//!   probe.
//! - [`train`]: the epoch loop with validation tracking, early stopping,
//!   JSON-lines metrics, and resumable checkpoints.
//! - [`gradcheck`]: finite-difference verification of the assembled
//!   gradient, with fault injection to prove the check has teeth.

pub mod baselines;
pub mod brm;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod pairs;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

//! Mixed-set domain adaptation with feature element-wise weighting (FEW).
//!
//! A source dataset whose category groups come from two different domains
//! (classes `1..=k` from domain α, classes `k+1..=c` from domain β) carries a
//! domain shift *inside* the source data on top of the usual source→target
//! shift. This crate implements the FEW training scheme for that setting:
//!
//! - [`autodiff`] — a small reverse-mode differentiation engine over dense
//!   `f64` arrays, including the gradient-reversal node that folds the
//!   adversarial min-max into a single minimization.
//! - [`nets`] — the feature extractor, bias-free classifier head, and the two
//!   three-layer discriminators, plus checkpointing.
//! - [`weighting`] — the element weight vectors ŵ, W, W̃ computed from the
//!   classifier head, their ramp schedule, and the weighted marginal
//!   adversarial loss between the two source domains.
//! - [`objective`] — the conditional adversarial loss on feature⊗probability
//!   embeddings and the integrated three-term objective.
//! - [`data`] — synthetic mixed-set generators with controllable per-group
//!   domain transforms, CSV ingestion of precomputed feature vectors, and
//!   seeded batch iterators.
//! - [`trainer`] — the end-to-end loop: per-iteration weight extraction, both
//!   adversarial terms, SGD with momentum under an inverse-decay learning-rate
//!   schedule, and target-accuracy evaluation.
//! - [`oracle`] — numerical verification that the adversarial value at the
//!   closed-form optimal discriminator equals −log 4 + 2·JSD on discrete
//!   distributions.

pub mod autodiff;


pub mod data;
pub mod error;
pub mod nets;
pub mod objective;

pub mod rng;

pub mod weighting;

pub use error::{Error, Result};

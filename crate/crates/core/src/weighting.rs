//! Feature element-wise weighting.
//!
//! The classifier head's weight matrix assigns every feature element a total
//! label relevance: the column sum ŵ_k. Elements with *small* total relevance
//! are assumed to carry domain rather than content information, so they get
//! *large* weights when the two source domains are aligned:
//!
//! `W = (1 - softmax(ŵ)) / mean(1 - softmax(ŵ))`, so `mean(W) = 1`.
//!
//! Early in training the head is not yet trustworthy, so the applied vector
//! is the ramped blend `W̃ = (W - 1)·δ + 1` with δ following a logistic
//! schedule in the iteration count.
//!
//! `W̃` is treated as a constant extracted from the live head each iteration:
//! no gradient flows back into the head through the weight computation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseArray, NodeId, Tape};
use crate::error::{Error, Result};
use crate::nets::{adversarial_pair, AdvMode, ClassifierHead, DiscriminatorNodes};
use crate::rng::Stream;

/// Endpoint convention for the δ ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// `δ = 2 / (1 + exp(-η·iter/max_iter))`, range `[1, 2)`: the weights are
    /// fully applied from the first iteration and amplified later.
    #[default]
    Paper,
    /// The same expression minus one, range `[0, 1)`: the ramp starts from
    /// unweighted alignment and blends toward `W`.
    DannShifted,
}

/// Parameters of the δ schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub eta: f64,
    pub max_iter: u64,
    pub convention: Convention,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            eta: 10.0,
            max_iter: 10_000,
            convention: Convention::Paper,
        }
    }
}

/// The three weight vectors extracted from the head at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementWeights {
    /// Column sums ŵ of the head weight matrix, length `feature_dim`.
    pub w_hat: Vec<f64>,
    /// Normalized complement weights W, `mean(W) = 1`.
    pub weights: Vec<f64>,
    /// Ramped weights W̃ actually applied to features.
    pub ramped: Vec<f64>,
    pub delta: f64,
}

/// `ŵ_k = Σ_i w[i,k]`: per-column total label relevance of feature element k.
pub fn column_sums(head: &ClassifierHead) -> Vec<f64> {
    let (c, lf) = (head.classes(), head.feature_dim());
    let mut sums = vec![0.0; lf];
    for i in 0..c {
        for k in 0..lf {
            sums[k] += head.weight.get(i, k);
        }
    }
    sums
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `W = (1 - σ(ŵ)) / mean(1 - σ(ŵ))`. Requires at least two feature
/// elements; with one element the softmax is 1 and the denominator vanishes.
pub fn element_weights(w_hat: &[f64]) -> Result<Vec<f64>> {
    if w_hat.len() < 2 {
        return Err(Error::Contract(format!(
            "element weights need feature_dim >= 2, got {}",
            w_hat.len()
        )));
    }
    let complements: Vec<f64> = softmax(w_hat).into_iter().map(|s| 1.0 - s).collect();
    let mean = complements.iter().sum::<f64>() / complements.len() as f64;
    Ok(complements.into_iter().map(|c| c / mean).collect())
}

/// δ at a training iteration. The iteration ratio is clamped at 1 so training
/// past `max_iter` keeps δ bounded and monotone.
pub fn delta_schedule(iter: u64, cfg: &ScheduleConfig) -> f64 {
    let ratio = (iter as f64 / cfg.max_iter as f64).min(1.0);
    let delta = 2.0 / (1.0 + (-cfg.eta * ratio).exp());
    match cfg.convention {
        Convention::Paper => delta,
        Convention::DannShifted => delta - 1.0,
    }
}

/// `W̃ = (W - 1)·δ + 1` element-wise.
pub fn ramp_weights(weights: &[f64], delta: f64) -> Vec<f64> {
    weights.iter().map(|&w| (w - 1.0) * delta + 1.0).collect()
}

/// Extract ŵ, W, δ and W̃ from the live head at `iter`.
pub fn compute_element_weights(
    head: &ClassifierHead,
    iter: u64,
    cfg: &ScheduleConfig,
) -> Result<ElementWeights> {
    let w_hat = column_sums(head);
    let weights = element_weights(&w_hat)?;
    let delta = delta_schedule(iter, cfg);
    let ramped = ramp_weights(&weights, delta);
    Ok(ElementWeights {
        w_hat,
        weights,
        ramped,
        delta,
    })
}

/// Marginal adversarial value between two feature batches:
/// `V = mean[log D(f_pos)] + mean[log(1 - D(f_neg))]`.
///
/// Used directly by the DANN baseline (no weighting) and as the unweighted
/// reference for the weighted loss below.
pub fn marginal_adv_loss(
    tape: &mut Tape,
    f_pos: NodeId,
    f_neg: NodeId,
    disc: &DiscriminatorNodes,
    mode: AdvMode,
    dropout_rng: Option<&mut Stream>,
) -> Result<NodeId> {
    let pos = mode.generator_side(tape, f_pos)?;
    let neg = mode.generator_side(tape, f_neg)?;
    adversarial_pair(tape, disc, pos, neg, mode, dropout_rng)
}

/// Element-wise weighted marginal adversarial value between the two source
/// domains: `V = mean[log D(W̃⊙f_α)] + mean[log(1 - D(W̃⊙f_β))]`.
///
/// `ramped` enters the graph as a constant leaf, so the gradient reaching
/// feature element k is exactly `W̃_k` times the gradient at the weighted
/// product, and nothing propagates into the head through the weights.
pub fn weighted_marginal_adv_loss(
    tape: &mut Tape,
    f_alpha: NodeId,
    f_beta: NodeId,
    ramped: &[f64],
    disc: &DiscriminatorNodes,
    mode: AdvMode,
    dropout_rng: Option<&mut Stream>,
) -> Result<NodeId> {
    let lf = tape.value(f_alpha).cols();
    if ramped.len() != lf {
        return Err(Error::Dimension {
            context: "weighted_marginal_adv_loss",
            left: vec![lf],
            right: vec![ramped.len()],
        });
    }
    let w = tape.leaf(DenseArray::vector(ramped.to_vec())?);
    let rev_alpha = mode.generator_side(tape, f_alpha)?;
    let rev_beta = mode.generator_side(tape, f_beta)?;
    let weighted_alpha = tape.mul(rev_alpha, w)?;
    let weighted_beta = tape.mul(rev_beta, w)?;
    adversarial_pair(tape, disc, weighted_alpha, weighted_beta, mode, dropout_rng)
}

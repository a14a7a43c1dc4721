//! Conditional adversarial alignment between source and target, and the
//! integrated three-term objective.
//!
//! The conditional discriminator never sees features alone: it sees the
//! flattened outer product `f ⊗ p` of a feature vector with its predicted
//! class probabilities, so matching source and target aligns the joint
//! feature–prediction structure rather than the marginals.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nets::{adversarial_pair, AdvMode, DiscriminatorNodes};
use crate::rng::Stream;

/// Row-wise flattened outer product, feature index major: entry `k·c + i`
/// holds `f_k · p_i`. The flattening order is fixed; checkpoints of the
/// conditional discriminator depend on it.
pub fn multilinear_map(tape: &mut Tape, f: NodeId, p: NodeId) -> Result<NodeId> {
    tape.multilinear(f, p)
}

/// Conditional adversarial value
/// `V = mean[log D(f_s ⊗ p_s)] + mean[log(1 - D(f_t ⊗ p_t))]`.
///
/// The joint embeddings are the generator-side inputs: in training mode the
/// gradient reversal wraps the embedding, which reverses the flow into both
/// the features and the live predictions feeding the map (neither is
/// detached).
pub fn conditional_adv_loss(
    tape: &mut Tape,
    f_source: NodeId,
    p_source: NodeId,
    f_target: NodeId,
    p_target: NodeId,
    disc: &DiscriminatorNodes,
    mode: AdvMode,
    dropout_rng: Option<&mut Stream>,
) -> Result<NodeId> {
    let e_source = multilinear_map(tape, f_source, p_source)?;
    let e_target = multilinear_map(tape, f_target, p_target)?;
    let rev_source = mode.generator_side(tape, e_source)?;
    let rev_target = mode.generator_side(tape, e_target)?;
    adversarial_pair(tape, disc, rev_source, rev_target, mode, dropout_rng)
}

/// `V1 + V2 + L_cls` as one scalar. Because the adversarial terms embed
/// gradient reversals on their generator paths, a single backward pass from
/// this node updates the discriminators toward maximizing and everything
/// else toward minimizing.
pub fn total_loss(tape: &mut Tape, v1: NodeId, v2: NodeId, l_cls: NodeId) -> Result<NodeId> {
    for (name, node) in [("V1", v1), ("V2", v2), ("L_cls", l_cls)] {
        let v = tape.scalar_value(node);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} (value {v})")));
        }
    }
    let adv = tape.add(v1, v2)?;
    tape.add(adv, l_cls)
}

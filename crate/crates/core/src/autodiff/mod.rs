//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Graphs are define-by-run: a [`Tape`] records every operation during the
//! forward pass and replays the recorded local rules in reverse to accumulate
//! gradients. Tapes are cheap and rebuilt each training iteration, which keeps
//! the per-iteration recomputation of the element weights trivial.
//!
//! The [`Tape::grad_reverse`] node is the piece that turns the adversarial
//! min-max into a single minimization: forward it is the identity, backward it
//! multiplies the upstream gradient by `-scale`.

mod array;
mod gradcheck;
mod tape;

pub use array::DenseArray;
pub use gradcheck::{check_gradients, BuiltLoss, GradCheckReport};
pub use tape::{NodeId, Tape};

/// Clamp bounds applied to every value that feeds a logarithm in a loss term,
/// and to discriminator outputs.
pub const LOG_CLAMP_LO: f64 = 1e-7;
pub const LOG_CLAMP_HI: f64 = 1.0 - 1e-7;

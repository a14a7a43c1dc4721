//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. The CLI maps variants onto exit codes, so keep the
/// validation / numeric / I/O distinction intact when adding variants.
#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes incompatible for an operation. Always names both shapes.
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An argument value outside its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A caller broke an API contract (empty batch, non-scalar backward root,
    /// nondeterministic loss builder, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or inconsistent input data; messages carry row numbers where
    /// applicable.
    #[error("data error: {0}")]
    Data(String),

    /// A NaN or infinity reached a place that requires finite values.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Configuration failed validation or strict parsing.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI uses for this error: 1 validation, 2 numeric, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension { .. }
            | Error::Parameter(_)
            | Error::Contract(_)
            | Error::Data(_)
            | Error::Config(_) => 1,
            Error::NonFinite(_) => 2,
            Error::Io(_) => 3,
        }
    }
}

use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::C64;

/// Errors produced by the solver core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    /// The closed-form power expression divides by `lambda_k - lambda_j`.
    #[error("degenerate dual multipliers: lambda_k = lambda_j = {0}")]
    DegenerateDuals(f64),

    /// No strictly feasible point exists for a conic problem.
    #[error("infeasible: constraint {constraint} violated by {violation:.3e}")]
    Infeasible { constraint: usize, violation: f64 },

    /// No randomized candidate satisfied the rate and interference
    /// constraints. `violations` holds the strong-rate, weak-rate and
    /// interference shortfalls of `best`.
    #[error("beam extraction failed: violations {violations:?}")]
    ExtractionFailure {
        best: Vec<C64>,
        violations: [f64; 3],
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Variants are
//! grouped by failure class rather than by module: structural problems with
//! inputs, domain violations of mathematical preconditions, numerical
//! non-convergence, and sampler/tuning pathologies.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched dimensions between a point/vector and the group structure.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A structural precondition on an input object failed (e.g. a matrix
    /// that is not skew-symmetric, a composition law that is not satisfied).
    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    /// A parameter lies outside its mathematical domain (e.g. p <= 1, a
    /// probability outside (0,1), a negative radius).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical value that must be finite came out NaN or infinite.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver failed: {what} (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    SolverFailed {
        what: String,
        residual: f64,
        tolerance: f64,
    },

    /// A feasibility-constrained search found no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Sampler tuning is outside the acceptable operating band.
    #[error("sampler tuning rejected: acceptance rate {rate:.3} outside [{lo:.2}, {hi:.2}]; try proposal scale near {suggested_scale:.3e}")]
    Tuning {
        rate: f64,
        lo: f64,
        hi: f64,
        suggested_scale: f64,
    },

    /// A quadrature or truncation-domain estimate did not stabilize.
    #[error("truncation error not under control: {0}")]
    Truncation(String),

    /// An empirical estimate did not stabilize well enough to report a value;
    /// the carried diagnostics explain what was observed.
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    /// An operation refused to run because its preconditions were not
    /// demonstrated (e.g. an equilibrium measure whose chain has not merged).
    #[error("refused: {0}")]
    Refused(String),

    /// Requested functionality that the configuration does not support.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Corpus too small for a meaningful fit.
    #[error("corpus too small: need at least {need}, got {got}")]
    CorpusTooSmall { need: usize, got: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

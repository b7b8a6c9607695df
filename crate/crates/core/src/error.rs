//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated (bad order, bad index,
    /// unsupported dimension, empty field, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Rejection sampling ran out of its attempt budget.
    #[error("sampling failed after {attempts} attempts ({context})")]
    SamplingExhausted { attempts: u64, context: String },

    /// An input that must lie in a Garding cone does not.
    #[error("cone violation: {0}")]
    ConeViolation(String),

    /// Division by a vanishing eigenvalue, gap or diagonal entry.
    #[error("singularity: {0}")]
    Singularity(String),

    /// The prescribed right-hand side evaluated non-positive.
    #[error("rhs positivity violated: f = {value:.6e} at node {node}")]
    RhsPositivity { value: f64, node: usize },

    /// Newton ran `iterations` steps without meeting the tolerance; the
    /// best residual seen is carried for diagnostics.
    #[error("no convergence after {iterations} iterations (best residual {best_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },

    /// The damped line search hit its floor without restoring
    /// admissibility (or star-shapedness) of the iterate.
    #[error("admissibility breakdown at damping floor (iteration {iteration})")]
    AdmissibilityBreakdown { iteration: usize },

    /// Pointwise second-order checks are refused where the top curvature
    /// is (nearly) multiple and only a viscosity interpretation is valid.
    #[error("viscosity regime: {0}")]
    ViscosityRegime(String),

    /// The iterative linear solver failed to reach its tolerance.
    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by constructors and operations in this crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A matrix failed the self-adjointness check.
    #[error("matrix is not Hermitian (residual {residual:.3e})")]
    NonHermitian {
        /// Operator-norm distance to the adjoint, relative to the scale.
        residual: f64,
    },

    /// An iterative numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Operand shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Quantum and classical objects were mixed in one operation.
    #[error("kind mismatch: quantum and classical objects cannot be combined")]
    KindMismatch,

    /// A product observable does not exist because effects fail to commute.
    #[error("effects do not commute{} (max residual {residual:.3e})", node.as_deref().map(|n| format!(" at node '{n}'")).unwrap_or_default())]
    NonCommuting {
        /// Tree node at which the product was attempted, when applicable.
        node: Option<String>,
        /// Largest commutator norm observed among effect pairs.
        residual: f64,
    },

    /// A point index fell outside the sample space.
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange {
        /// Offending index.
        index: usize,
        /// Size of the indexed space.
        size: usize,
    },

    /// A classical-only operation received quantum data.
    #[error("operation requires classical data")]
    NotClassical,

    /// Projections fail idempotency, orthogonality, or completeness.
    #[error("invalid spectral resolution (residual {residual:.3e})")]
    InvalidResolution {
        /// Largest violation among the projection invariants.
        residual: f64,
    },

    /// A joint-measurement scenario violates its commutation requirement.
    #[error("scenario invalid: joint observables do not commute (residual {residual:.3e})")]
    ScenarioInvalid {
        /// Commutator norm of the joint observables.
        residual: f64,
    },

    /// Randomized construction could not produce a valid object.
    #[error("construction failed: {0}")]
    ConstructionFailed(String),

    /// A noncommutativity probe found commuting operators instead.
    #[error("unexpected commutation (residual {residual:.3e} below threshold)")]
    UnexpectedCommutation {
        /// Observed commutator norm.
        residual: f64,
    },

    /// A value violates a construction invariant (norm, positivity, finiteness, ...).
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

/// Convenience alias for results in this crate.
pub type Result<T> = std::result::Result<T, Error>;

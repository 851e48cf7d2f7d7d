//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QcError {
    /// A constructor or operation received parameters that violate a
    /// documented invariant (non-increasing levels, κ < 0, ...).
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// Two inputs that must share a grid or dimension do not.
    #[error("shape mismatch: {0}")]
    ShapeError(String),

    /// An integrator produced a non-finite value or broke a monotonicity
    /// guard; `step` is the grid index at which it happened.
    #[error("numeric failure at step {step}: {what}")]
    NumericFailure { step: usize, what: String },

    /// A weighted ensemble does not carry a usable normalized measure.
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// Every importance weight underflowed; the ensemble carries no
    /// information. The largest log-weight seen is attached for diagnosis.
    #[error("degenerate ensemble: max log-weight {max_log_weight}")]
    DegenerateEnsemble { max_log_weight: f64 },

    /// A spatial grid is too coarse for the requested dynamics.
    #[error("resolution error: {0}")]
    ResolutionError(String),

    /// The two-outcome meter has p1 == p2 and its readout cannot be inverted.
    #[error("non-invertible meter: outcome probabilities are equal")]
    NonInvertibleMeter,

    /// The soft meter extracts too much information per step for the
    /// weak-measurement formulas to apply.
    #[error("outside weak regime: {0}")]
    OutsideWeakRegime(String),

    /// An operation precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QcError>;

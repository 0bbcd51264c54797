use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("measurement plane overlaps the sample volume (standoff {standoff} < 1 pitch)")]
    PlaneOverlapsVolume { standoff: f64 },

    #[error("invalid configuration for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("forward operator I - VΓ is singular or inadmissible (condition number {condition:e})")]
    SingularForwardOperator { condition: f64 },

    #[error("phantom contrast {contrast} exceeds admissibility cap {cap}")]
    ContrastExceedsCap { contrast: f64, cap: f64 },

    #[error("singular value decomposition failed to converge")]
    NumericallyFailedSvd,

    #[error("resolvent I - VΓ is singular (condition number {condition:e})")]
    SingularResolvent { condition: f64 },

    #[error("I + TΓ is singular; T is not admissible (condition number {condition:e})")]
    SingularInverse { condition: f64 },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("direct field vanishes at entry ({row}, {col})")]
    ZeroDirectField { row: usize, col: usize },

    #[error("Rytov logarithm is branch-ambiguous at {} entries", .entries.len())]
    BranchAmbiguous { entries: Vec<(usize, usize)> },

    #[error("mean-field transform has a pole at {} entries", .entries.len())]
    PoleEntry { entries: Vec<(usize, usize)> },

    #[error("iteration did not converge within {iterations} iterations (last step norm {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("verification `{check}` failed: discrepancy {discrepancy:e} > tolerance {tolerance:e}")]
    VerificationFailure {
        check: String,
        discrepancy: f64,
        tolerance: f64,
    },

    #[error("problem too large for oracle construction: {0}")]
    OracleScaleExceeded(String),

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or unsupported configuration input.
    #[error("config error: {0}")]
    Config(String),

    /// A matrix that must be symmetric positive-definite is not.
    #[error("definiteness error: {0}")]
    Definiteness(String),

    /// The initial set is not strictly inside the target set at t0.
    #[error("well-posedness error: {0}")]
    WellPosedness(String),

    /// The tube radius leaves no admissible shrink factor.
    #[error("shrinkage-infeasible error: {0}")]
    ShrinkageInfeasible(String),

    /// The shrunk target set at t0 no longer contains the initial set.
    #[error("delta-too-large error: {0}")]
    DeltaTooLarge(String),

    /// Caller violated an inter-module contract (mismatched grids, bad dither...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Semidefinite block assembly failed.
    #[error("assembly error: {0}")]
    Assembly(String),

    /// The conic solver failed or returned an unusable status.
    #[error("solver error: {0}")]
    Solver(String),

    /// No feasible gain product within the scan range.
    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),

    /// State norm exceeded the divergence cap during integration.
    #[error("divergence at t = {time:.6}: |x| = {norm:.3e}")]
    Divergence { time: f64, norm: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error onto.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Config(_)
            | Error::Definiteness(_)
            | Error::WellPosedness(_)
            | Error::ShrinkageInfeasible(_)
            | Error::DeltaTooLarge(_)
            | Error::Contract(_)
            | Error::Assembly(_) => 2,
            Error::Solver(_) | Error::SynthesisFailed(_) => 3,
            Error::Divergence { .. } => 4,
            Error::Io(_) | Error::Json(_) => 5,
        }
    }
}

//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by toolkit operations.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Shapes of two operands do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A conditional probability was requested for an event with zero mass.
    #[error("zero-mass conditioning: {0}")]
    ZeroMassConditioning(String),

    /// A documented precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Candidate pool size is outside `1..=k`.
    #[error("invalid pool size {k_pool} for {k} latent features")]
    InvalidPoolSize { k_pool: usize, k: usize },

    /// Every candidate direction collapsed during orthonormalization.
    #[error("all candidate directions are degenerate")]
    AllDirectionsDegenerate,

    /// A basis handed to the projector is not orthonormal.
    #[error("basis is not orthonormal (max Gram deviation {deviation:.3e})")]
    NonOrthonormalInput { deviation: f64 },

    /// Input has too few non-constant columns to correlate.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Model construction could not satisfy its invariants.
    #[error("construction infeasible: {0}")]
    ConstructionInfeasible(String),

    /// A token is not part of the model vocabulary.
    #[error("unknown token: {0}")]
    UnknownToken(String),

    /// An activation vector contains NaN or infinity.
    #[error("non-finite activation")]
    NonFiniteActivation,

    /// Judge called on an empty response.
    #[error("empty response")]
    EmptyResponse,

    /// Aggregation called on an empty collection.
    #[error("empty input")]
    EmptyInput,

    /// Training loss became non-finite.
    #[error("training diverged at step {step}")]
    Divergence { step: u64 },

    /// Underlying IO failure.
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),

    /// File is not in the expected container format.
    #[error("format error: {0}")]
    Format(String),

    /// Container version is not supported.
    #[error("format version mismatch: expected {expected}, got {got}")]
    FormatVersionMismatch { expected: u32, got: u32 },

    /// Trailing checksum does not match the file contents.
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
}

/// Convenient result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

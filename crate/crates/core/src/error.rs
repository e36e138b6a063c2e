use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("modulus is not a prime above 2^250: {0}")]
    InvalidModulus(String),

    #[error("fixed-point parameters leave no headroom: {0}")]
    InvalidFixedPoint(String),

    #[error("malformed field encoding at index {index}: {reason}")]
    MalformedEncoding { index: usize, reason: String },

    #[error("model size {d} exceeds the supported maximum {max}")]
    CircuitTooLarge { d: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("element {index} is outside the signed range (|q| must be < 2^{bits})")]
    RangeViolation { index: usize, bits: u32 },

    #[error("sponge hash needs at least one input element")]
    EmptyHashInput,

    #[error("attestation backend {0} is unavailable")]
    BackendUnavailable(String),

    #[error("proving key is bound to circuit {key} but the witness belongs to {witness}")]
    KeyCircuitMismatch { key: String, witness: String },

    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("no client survived selection in round {round}")]
    EmptySelection { round: usize },

    #[error("transcript check failed at round {round}: {reason}")]
    TranscriptMismatch { round: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

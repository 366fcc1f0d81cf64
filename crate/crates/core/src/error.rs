use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("direction is not unit length (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("zero-length edge between atoms {src} and {dst}")]
    ZeroLengthEdge { src: usize, dst: usize },

    #[error("invalid atomic system: {0}")]
    InvalidSystem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("composition matrix is rank deficient; degenerate elements: {elements:?}")]
    RankDeficient { elements: Vec<u32> },

    #[error("normalization scale is zero")]
    ZeroScale,

    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("non-identifiable fit: {0}")]
    NonIdentifiable(String),

    #[error("fit did not converge: {0}")]
    FitFailed(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

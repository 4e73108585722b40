use thiserror::Error;

/// Errors raised by the tomography library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),

    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {len} entries cannot fill a {rows}x{cols} matrix")]
    LengthMismatch { len: usize, rows: usize, cols: usize },

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid operator basis: {0}")]
    InvalidBasis(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("Kraus operators are not trace preserving (residual {0:.3e})")]
    NotTracePreserving(f64),

    #[error("invalid estimation problem: {0}")]
    InvalidProblem(String),

    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),

    #[error("probability model breached tolerance: {0}")]
    ToleranceBreach(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

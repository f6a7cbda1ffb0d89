use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("empty sample set")]
    EmptySet,
    #[error("degenerate chromaticity hull: {0}")]
    DegenerateHull(String),
    #[error("unmappable color {y:?}: no lattice point within {cutoff:.3} gray levels")]
    ZeroMass { y: [u8; 3], cutoff: f64 },
    #[error("reference color has zero norm")]
    ZeroNorm,
    #[error("rank-deficient system: {0}")]
    RankDeficient(String),
    #[error("zero matrix: {0}")]
    ZeroMatrix(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("internal numerical failure: {0}")]
    Internal(String),
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure is numerical (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroMass { .. }
                | Error::RankDeficient(_)
                | Error::ZeroMatrix(_)
                | Error::Internal(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

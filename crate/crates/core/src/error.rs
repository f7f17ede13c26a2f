use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (relative deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("state vector has zero or non-finite norm")]
    ZeroVector,

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("`{name}` = {value} violates the resolution guard (must be below {bound})")]
    Guard {
        name: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("density is not positive in cell {cell}; use a smaller time step or smoother initial data")]
    NonPositiveDensity { cell: usize },

    #[error("energy {energy} lies outside the spectral hull [{min}, {max}]")]
    OutsideHull { energy: f64, min: f64, max: f64 },

    #[error("need at least {needed} snapshots, found {found}")]
    TooFewSnapshots { needed: usize, found: usize },

    #[error("snapshots are not uniformly spaced in time")]
    NonUniformSpacing,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

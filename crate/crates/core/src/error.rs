use std::path::PathBuf;

use crate::geometry::Side;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid bandwidth {0}: must be finite and positive")]
    InvalidBandwidth(f64),

    #[error("{side} side: gram matrix is singular (min eigenvalue {min_eigenvalue:e})")]
    SingularGram { side: Side, min_eigenvalue: f64 },

    #[error("{side} side: insufficient data ({n_eff} weighted observations, need {needed})")]
    InsufficientData {
        side: Side,
        n_eff: usize,
        needed: usize,
    },

    #[error("invalid pairing: {0}")]
    InvalidPairing(String),

    #[error("degenerate variance at grid point {index}: {value:e}")]
    DegenerateVariance { index: usize, value: f64 },

    #[error("invalid level {0}: must lie in (0, 1)")]
    InvalidLevel(f64),

    #[error("matrix is not a valid correlation matrix: {0}")]
    NotPsd(String),

    #[error("bandwidth selection failed: {0}")]
    BandwidthSelectionFailed(String),

    #[error("no admissible mass on the circle of radius {radius} around ({x1}, {x2})")]
    NoMass { x1: f64, x2: f64, radius: f64 },

    #[error("quadrature failed to reach tolerance (estimated error {0:e})")]
    ToleranceFailed(f64),

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("missing required column `{0}`")]
    Schema(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code used in per-point output rows.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidBandwidth(_) => "invalid-bandwidth",
            Error::SingularGram { .. } => "singular-gram",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::InvalidPairing(_) => "invalid-pairing",
            Error::DegenerateVariance { .. } => "degenerate-variance",
            Error::InvalidLevel(_) => "invalid-level",
            Error::NotPsd(_) => "not-psd",
            Error::BandwidthSelectionFailed(_) => "bandwidth-selection-failed",
            Error::NoMass { .. } => "no-mass",
            Error::ToleranceFailed(_) => "tolerance-failed",
            Error::Degenerate(_) => "degenerate",
            Error::InvalidData(_) => "invalid-data",
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

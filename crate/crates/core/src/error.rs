use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("wavelengths must be strictly increasing (index {index})")]
    NonIncreasingWavelengths { index: usize },

    #[error("invalid spectral grid: {0}")]
    InvalidGrid(String),

    #[error("white reference is degenerate at band {band} (mean {value:e})")]
    DegenerateWhite { band: usize, value: f64 },

    #[error("spectral grids differ")]
    GridMismatch,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metamer request infeasible: {0}")]
    MetamerInfeasible(String),

    #[error("resonance matrix is singular at omega = {omega} rad/fs{}", band.map(|b| format!(" (band {b})")).unwrap_or_default())]
    Singular { omega: f64, band: Option<usize> },

    #[error("background matrix is not unitary (deviation {0:e})")]
    NonUnitaryBackground(f64),

    #[error("ill-conditioned projector bank (Gram condition {0:e})")]
    IllConditioned(f64),

    #[error("SVD did not converge")]
    SvdNotConverged,

    #[error("readout gain is degenerate: channel {channel} has zero maximum")]
    GainDegenerate { channel: usize },

    #[error("negative barcode value {value} at index {index}; readout needs non-negative intensities")]
    NegativeIntensity { index: usize, value: f64 },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("all {restarts} fit restarts diverged")]
    FitFailure {
        restarts: usize,
        report: Box<crate::fitting::FitReport>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Coarse category used for diagnostics and process exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::Format(_)
            | Error::NonIncreasingWavelengths { .. }
            | Error::InvalidGrid(_) => "format",
            Error::Config(_) => "config",
            Error::GridMismatch | Error::DimensionMismatch(_) | Error::InvalidArgument(_) => {
                "argument"
            }
            _ => "numerical",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

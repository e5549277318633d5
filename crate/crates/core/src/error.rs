use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures while decoding an `HPT1` trace file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceFileError {
    #[error("bad magic {found:?}, expected \"HPT1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported trace file version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("trailing data: expected {expected} bytes, found {found}")]
    TrailingData { expected: u64, found: u64 },
    #[error("invalid header field {field}: {reason}")]
    InvalidHeader { field: &'static str, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid gain {0}: parametric gain must be at least 1")]
    InvalidGain(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pump parameter {0} is at or above the oscillation threshold")]
    AboveThreshold(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("inconsistent rates: {0}")]
    InconsistentRates(String),
    #[error("trace file: {0}")]
    TraceFile(#[from] TraceFileError),
    #[error("quadrature extraction has no vacuum calibration")]
    Uncalibrated,
    #[error("invalid cutoff {cutoff_hz} Hz: must be positive and below Nyquist ({nyquist_hz} Hz)")]
    InvalidCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("unphysical loss correction: population {population:.4} at n={n}")]
    Unphysical { n: usize, population: f64 },
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),
    #[error("degenerate normalization: {0}")]
    Degenerate(String),
    #[error("malformed table {path}: {reason}")]
    Table { path: String, reason: String },
    #[error("missing upstream artifact {}", .0.display())]
    Dependency(PathBuf),
    #[error("maximum-likelihood iteration did not converge after {iterations} likelihood evaluations (last change {change:.2e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("usage: {0}")]
    Usage(String),
    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used as the prefix of CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGain(_) => "E_INVALID_GAIN",
            Error::InvalidParameter(_) => "E_INVALID_PARAMETER",
            Error::AboveThreshold(_) => "E_ABOVE_THRESHOLD",
            Error::Config(_) => "E_CONFIG",
            Error::InconsistentRates(_) => "E_INCONSISTENT_RATES",
            Error::TraceFile(_) => "E_TRACE_FILE",
            Error::Uncalibrated => "E_UNCALIBRATED",
            Error::InvalidCutoff { .. } => "E_INVALID_CUTOFF",
            Error::FitFailure(_) => "E_FIT_FAILURE",
            Error::EmptyInput(_) => "E_EMPTY_INPUT",
            Error::Unphysical { .. } => "E_UNPHYSICAL",
            Error::InsufficientStatistics(_) => "E_INSUFFICIENT_STATISTICS",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::Table { .. } => "E_TABLE",
            Error::Dependency(_) => "E_DEPENDENCY",
            Error::NotConverged { .. } => "E_NOT_CONVERGED",
            Error::Usage(_) => "E_USAGE",
            Error::Io { .. } => "E_IO",
        }
    }

    /// Process exit status: 2 for usage and configuration problems, 4 for
    /// non-convergence, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::NotConverged { .. } => 4,
            _ => 3,
        }
    }
}

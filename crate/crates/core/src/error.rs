use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no observation within one bandwidth of {at}")]
    EmptyWindow { at: f64 },

    /// Signed boundary weights summed to a non-positive total.
    #[error("boundary kernel weights sum to {sum} at {at}")]
    DegenerateWeights { at: f64, sum: f64 },

    #[error("kernel truncated at u_min = {u_min} has empty support")]
    DegenerateTruncation { u_min: f64 },

    #[error("shifted conditioning points leave the data support at {uncovered} of {total} grid nodes")]
    GridCoverage { uncovered: usize, total: usize },

    #[error("counterfactual mass above {cutoff} is {mass:e}; ATT undefined")]
    ZeroMass { cutoff: f64, mass: f64 },

    #[error("counterfactual density {value:e} at {at} is too small to divide by")]
    DensityTooSmall { at: f64, value: f64 },

    #[error("row {row} (line {line}): {message}")]
    InvalidRow {
        row: usize,
        line: u64,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("{failed} of {total} bootstrap replicates failed")]
    ReplicateFailures { failed: usize, total: usize },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
    Bootstrap,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Estimation => 4,
            ErrorClass::Bootstrap => 5,
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Estimation => "estimation",
            ErrorClass::Bootstrap => "bootstrap",
        })
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => ErrorClass::Config,
            Error::InvalidRow { .. }
            | Error::MissingColumn(_)
            | Error::InvalidData(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::EmptySample(_)
            | Error::LengthMismatch { .. } => ErrorClass::Data,
            Error::EmptyWindow { .. }
            | Error::DegenerateWeights { .. }
            | Error::DegenerateTruncation { .. }
            | Error::GridCoverage { .. }
            | Error::ZeroMass { .. }
            | Error::DensityTooSmall { .. } => ErrorClass::Estimation,
            Error::ReplicateFailures { .. } => ErrorClass::Bootstrap,
        }
    }

    /// True for failures caused by sparse data around an evaluation point.
    pub fn is_local_failure(&self) -> bool {
        matches!(
            self,
            Error::EmptyWindow { .. }
                | Error::DegenerateWeights { .. }
                | Error::DegenerateTruncation { .. }
                | Error::DensityTooSmall { .. }
        )
    }
}

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::Io => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("arbitrage violation: call value {call} exceeds asset value {asset}")]
    Arbitrage { call: f64, asset: f64 },

    #[error("arithmetic down return {down} <= -1 would make prices non-positive")]
    NegativePrice { down: f64 },

    #[error("risk-neutral probability q = {q} lies outside [0, 1]")]
    RiskNeutralInfeasible { q: f64 },

    #[error("{steps} tree steps exceeds the limit of {limit}")]
    TooManySteps { steps: usize, limit: usize },

    #[error("objective returned NaN at x = {x}")]
    NanObjective { x: f64 },

    #[error("calibration infeasible: every point of [{lo}, {hi}] is risk-neutral infeasible")]
    CalibrationInfeasible { lo: f64, hi: f64 },

    #[error("missing mandatory column `{0}`")]
    Schema(String),

    #[error("insufficient data: window needs {needed} dates, {available} available")]
    InsufficientData { needed: usize, available: usize },

    #[error("rate series is empty")]
    EmptyRates,

    #[error("missing prerequisite: {0}")]
    Dependency(String),

    #[error("surface axes differ")]
    AxisMismatch,

    #[error("incompatible surface kinds: {0}")]
    IncompatibleKinds(String),

    #[error("surface is empty")]
    EmptySurface,

    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NegativePrice { .. }
            | Error::RiskNeutralInfeasible { .. }
            | Error::TooManySteps { .. }
            | Error::NanObjective { .. }
            | Error::CalibrationInfeasible { .. } => ErrorCategory::Numerical,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Csv(e) if e.is_io_error() => ErrorCategory::Io,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

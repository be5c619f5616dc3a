use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
    PartialStudy,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("series `{series}` has a duplicate date {date}")]
    DuplicateDate { series: String, date: NaiveDate },

    #[error("unparseable dates in rows {rows:?}")]
    BadDates { rows: Vec<usize> },

    #[error("non-numeric cell `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("date intersection of the input series is empty")]
    EmptyIntersection,

    #[error("series `{series}` has a gap of {gap} rows before {date}, max allowed {max_gap}")]
    GapTooLarge {
        series: String,
        date: NaiveDate,
        gap: usize,
        max_gap: usize,
    },

    #[error("no emission factor for series `{0}`")]
    MissingFactor(String),

    #[error("no HICP value for month {0}")]
    MissingHicp(String),

    #[error("no FX rate for {0}")]
    MissingFx(NaiveDate),

    #[error("non-positive value {value} at row {row}, series `{series}`")]
    NonPositive {
        row: usize,
        series: String,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite {component} at t = {t}")]
    NonFinite { t: usize, component: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{failed} of {total} study tasks failed")]
    StudyFailed { failed: usize, total: usize },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::NonFinite { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::StudyFailed { .. } => ErrorKind::PartialStudy,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

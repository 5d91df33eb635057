use chrono::NaiveDate;
use thiserror::Error;

use crate::glm::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: duplicate record for basin {basin} on {date}")]
    DuplicateRecord {
        line: u64,
        basin: String,
        date: NaiveDate,
    },

    #[error("basin {basin}: missing days {from} ..= {to}")]
    DateGap {
        basin: String,
        from: NaiveDate,
        to: NaiveDate,
    },

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        last: Box<FitResult>,
    },

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),
}

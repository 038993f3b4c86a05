use thiserror::Error;

/// Errors raised by the numeric core and the model constructions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("matrix data has length {len}, expected {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has zero l1 norm")]
    DegenerateRow { row: usize },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("mask {target} is not dominated by mask {available} at ({row}, {col})")]
    MaskDominance {
        target: &'static str,
        available: &'static str,
        row: usize,
        col: usize,
    },

    #[error("unsupported activation: {0}")]
    UnsupportedActivation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}

//! Error type shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // -- configuration ------------------------------------------------------
    #[error("config: {0}")]
    Config(String),

    // -- data ingestion and alignment ---------------------------------------
    #[error("duplicate row for ({country}, {year})")]
    DuplicateRow { country: String, year: i32 },
    #[error("duplicate entry for ({country}, {year}, {metric})")]
    DuplicateCell {
        country: String,
        year: i32,
        metric: String,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("no metric columns found")]
    NoMetricColumns,
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("column ids do not match: {0}")]
    ColumnMismatch(String),
    #[error("target column {0:?} not found")]
    MissingTargetColumn(String),
    #[error("no rows survived the target join")]
    NoRowsAfterJoin,
    #[error("panel has no rows")]
    EmptyPanel,
    #[error("sample has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value at index {index}")]
    NonFiniteFeature { index: usize },
    #[error("non-finite point at row {row}")]
    NonFinitePoint { row: usize },
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
    #[error("target is constant; R-squared is undefined")]
    ConstantTarget,
    #[error("contribution matrix is empty")]
    EmptyMatrix,
    #[error("model hash mismatch: {a} vs {b}")]
    ModelHashMismatch { a: String, b: String },
    #[error("comparison group {0:?} is empty")]
    EmptyGroup(String),
    #[error("groups overlap on row {0}")]
    OverlappingGroups(usize),
    #[error("no sample matches selector {0:?}")]
    UnknownSelector(String),
    #[error("k = {k} exceeds the {distinct} distinct points")]
    KExceedsDistinctPoints { k: usize, distinct: usize },
    #[error("out-of-bag evaluation requires a bootstrapped model")]
    OobUnavailable,
    #[error("no rows have an out-of-bag prediction")]
    NoOobRows,
    #[error("model file: {0}")]
    ModelFormat(String),

    // -- training -----------------------------------------------------------
    #[error("row subset is empty")]
    EmptyRowSubset,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    // -- wrapped ------------------------------------------------------------
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 1 config, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) => 1,
            EmptyRowSubset | InvalidHyperparams(_) => 3,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum CactusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("label column `{0}` not found in header")]
    LabelColumnMissing(String),

    #[error("row {row}, column `{column}`: non-numeric value `{value}` in a continuous column")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: expected {expected} cells, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: missing class label")]
    MissingLabel { row: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),

    #[error("feature `{0}` is not part of the schema")]
    UnknownFeature(String),

    #[error("feature filter removed every feature (last constraint applied: {0})")]
    FilterEmptied(&'static str),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("class count {0} outside the supported range 2..=20")]
    ClassCount(usize),

    #[error("feature `{0}` has fewer than two distinct observed values")]
    ConstantFeature(String),

    #[error("feature `{0}` is observed in a single class only; no bipartition can be scored")]
    Unseparable(String),

    #[error("feature `{0}` has no observed values")]
    NoObservations(String),

    #[error("expected {expected} cells in sample, found {found}")]
    FeatureCountMismatch { expected: usize, found: usize },

    #[error("flips `{0}` and `{1}` belong to the same feature")]
    SameFeature(String, String),

    #[error("flip index {0} outside the flip universe")]
    UnknownFlip(usize),

    #[error("class {0} has no rows")]
    EmptyClass(usize),

    #[error("pagerank did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid pagerank parameters: {0}")]
    PageRankParams(String),

    #[error("non-finite centrality for flip `{flip}` in class {class}")]
    NonFiniteCentrality { flip: String, class: usize },

    #[error("class {0} absent from the reference labels")]
    ClassAbsent(usize),

    #[error("predictions and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training split of fold {fold} has no rows of class {class}")]
    Stratification { fold: usize, class: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("model/input schema mismatch: {0}")]
    SchemaMismatch(String),
}

pub type Result<T, E = CactusError> = std::result::Result<T, E>;

impl CactusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CactusError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        CactusError::Json {
            path: path.into(),
            source,
        }
    }
}

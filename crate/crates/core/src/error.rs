use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the triage pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown diagnosis {name:?}; known diagnoses: {vocabulary}")]
    UnknownDiagnosis { name: String, vocabulary: String },
    #[error("incomplete review: {0}")]
    IncompleteReview(String),
    #[error("invalid forward cache: {0}")]
    InvalidCache(String),
    #[error("gradient check requires a deterministic closure (dropout must be off)")]
    NonDeterministicClosure,
    #[error("bag is empty")]
    EmptyBag,
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("model has no calibrated thresholds")]
    MissingThresholds,
    #[error("AUC undefined for {0}: needs at least one positive and one negative")]
    UndefinedAuc(String),
    #[error("train/test leakage: specimen {0} appears in both")]
    Leakage(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("dataset inconsistency for specimen {specimen}: {detail}")]
    Inconsistent { specimen: String, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("missing embedding for specimen {specimen} tile {tile}")]
    MissingEmbedding { specimen: String, tile: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

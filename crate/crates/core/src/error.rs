use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while ingesting or transforming tabular data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` is missing from the CSV header")]
    MissingColumn(String),
    #[error("row {row}, column `{col}`: cannot interpret `{value}`")]
    TypeMismatch { row: usize, col: String, value: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    BadRatios([f64; 3]),
    #[error("need at least {min} rows, got {n}")]
    TooFewRows { n: usize, min: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("unknown dataset preset `{0}`")]
    UnknownPreset(String),
    #[error("dataset file {0} not found (datasets are never downloaded; place the CSV there)")]
    DatasetFileMissing(PathBuf),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Errors raised by model construction and evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("incompatible backbone spec: {0}")]
    IncompatibleSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Errors raised by K-Means.
#[derive(Debug, Error)]
pub enum KMeansError {
    #[error("K-Means needs at least K={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("K must be at least 1")]
    ZeroClusters,
    #[error("embeddings contain non-finite values")]
    NonFinite,
}

/// Errors raised by transport solvers.
#[derive(Debug, Error)]
pub enum OtError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weights must be a probability vector: {0}")]
    NotOnSimplex(String),
    #[error("regularization must be positive, got {0}")]
    BadRegularization(f64),
}

/// Errors raised by loss evaluation.
#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: f64, classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Errors raised by the training loops.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("objective diverged at epoch {epoch}, step {step}: {detail}")]
    DivergedLoss { epoch: usize, step: usize, detail: String },
    #[error("phase 2 requires a prototype space")]
    MissingPrototypes,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Errors raised by the evaluation harness.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("too few non-zero paired differences: {0} (need at least 5)")]
    TooFewPairs(usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("group `{0}` has no records")]
    EmptyGroup(String),
    #[error("no records to aggregate")]
    NoRecords,
}

/// Errors raised by plotting and report generation.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("need at least two label groups")]
    SingleClass,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(String),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

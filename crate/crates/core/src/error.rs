//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // dataset
    #[error("class {class} has no examples")]
    EmptyClass { class: usize },
    #[error("class {class} has {available} examples but {required} are required")]
    InsufficientSource { class: usize, available: usize, required: usize },
    #[error("invalid imbalance spec: {0}")]
    InvalidSpec(String),
    #[error("balanced subset needs {per_class} per class but the smallest class has {min_count}")]
    SubsetTooLarge { per_class: usize, min_count: usize },
    #[error("balanced subset size {total} gives fewer than one example per class for {classes} classes")]
    InvalidSize { total: usize, classes: usize },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("label {label} is outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    // encoder
    #[error("embedding of dimension {found} where {expected} was expected")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("example `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("embedding provider unavailable after {attempts} attempts: {detail}")]
    ProviderUnavailable { attempts: usize, detail: String },

    // weights
    #[error("invalid class counts: {0}")]
    InvalidCounts(String),
    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    // selection
    #[error("requested {requested} items from a pool of {available}")]
    KTooLarge { requested: usize, available: usize },
    #[error("combined weight w+beta = {value} for class {class} is not positive")]
    NonPositiveWeight { class: usize, value: f64 },

    // bayesopt
    #[error("Gram matrix is not positive definite even with jitter {jitter:e}")]
    SingularGram { jitter: f64 },
    #[error("prediction failed for query `{query_id}`: {source}")]
    PredictorFailure {
        query_id: String,
        #[source]
        source: Box<Error>,
    },

    // predictor
    #[error("no demonstrations supplied")]
    EmptyDemos,
    #[error("empty token sequence")]
    EmptySequence,
    #[error("language model client error: {0}")]
    ClientError(String),
    #[error("scoring endpoint returned no per-token logprobs")]
    MissingLogprobs,
    #[error("example `{0}` has no reference output")]
    MissingTarget(String),

    // eval
    #[error("{predictions} predictions against {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("class {0} is missing from one of the datasets")]
    MissingClass(usize),
    #[error("cannot fit {clusters} clusters to {points} points")]
    DegenerateClustering { clusters: usize, points: usize },

    // harness
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attach a pipeline stage label.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Process exit code: 2 config, 3 upstream service, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::KTooLarge { .. } | Error::InvalidSpec(_) => 2,
            Error::ProviderUnavailable { .. } | Error::ClientError(_) | Error::MissingLogprobs => 3,
            Error::PredictorFailure { source, .. } | Error::Stage { source, .. } => source.exit_code(),
            _ => 4,
        }
    }
}

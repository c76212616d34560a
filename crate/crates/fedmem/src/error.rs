//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the auditing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("template field `{0}` is missing from the sample")]
    MissingField(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("empty eval set: {0}")]
    EmptyEvalSet(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("incompatible models: {0}")]
    IncompatibleModels(String),

    #[error("backend `{tag}` failed: {cause}")]
    Backend { tag: String, cause: String },

    #[error("cannot build an index from an empty suffix set")]
    EmptyIndex,

    #[error("query tokenizes to nothing")]
    EmptyQuery,

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("inter-client ratio is undefined for a single client")]
    UndefinedInter,

    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{failed} of {total} generations failed, above the {limit_pct:.1}% abort threshold")]
    FailureThreshold {
        failed: usize,
        total: usize,
        limit_pct: f64,
    },

    #[error("stage `{stage}` (source client {source}{})", .target.map(|t| format!(", target client {t}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        source: usize,
        target: Option<usize>,
        #[source]
        cause: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage and client pair it came from.
    pub fn at_stage(self, stage: &'static str, source: usize, target: Option<usize>) -> Self {
        Error::Stage {
            stage,
            source,
            target,
            cause: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 backend, 4 data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Backend { .. } | Error::FailureThreshold { .. } => 3,
            Error::Data(_)
            | Error::InvalidPartition(_)
            | Error::EmptyDataset(_)
            | Error::EmptyEvalSet(_)
            | Error::MissingField(_)
            | Error::Io(_)
            | Error::Json(_) => 4,
            Error::Stage { cause, .. } => cause.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

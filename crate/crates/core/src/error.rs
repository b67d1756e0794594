//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout `iris-core`.
pub type Result<T> = std::result::Result<T, IrisError>;

#[derive(Debug, thiserror::Error)]
pub enum IrisError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("shape mismatch for tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("corrupt blob: {0}")]
    CorruptBlob(String),

    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("context overflow: {requested} positions requested, max_context is {max_context}")]
    ContextOverflow { requested: usize, max_context: usize },

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("token id {id} cannot be detokenized (vocab size {vocab_size})")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("no tokens observed")]
    EmptyObservation,

    #[error("empty reservoir at layer {layer}, unit {unit}")]
    EmptyReservoir { layer: usize, unit: usize },

    #[error("empty question set")]
    EmptyQuestions,

    #[error("generation failed for question `{question_id}`: {source}")]
    Generation {
        question_id: String,
        #[source]
        source: Box<IrisError>,
    },

    #[error("bank has no entry for domain {domain} / topic `{topic}`")]
    MissingCondition { domain: String, topic: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("model fingerprint mismatch: bank {bank}, model {model}")]
    FingerprintMismatch { bank: String, model: String },

    #[error("missing model fingerprint")]
    MissingFingerprint,

    #[error("key collision on domain {domain} / topic `{topic}`")]
    KeyCollision { domain: String, topic: String },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("topic mismatch: {0}")]
    TopicMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("score {0} outside [1, 5]")]
    ScoreOutOfRange(f64),

    #[error("judge error: {0}")]
    Judge(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl IrisError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            IrisError::MissingFile(path)
        } else {
            IrisError::Io { path, source }
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        IrisError::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, values)
    /// rather than by a failure while running a valid request.
    pub fn is_validation(&self) -> bool {
        match self {
            IrisError::Io { .. } | IrisError::Judge(_) | IrisError::Csv(_) => false,
            IrisError::Generation { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    /// A malformed record inside a dataset or cache file.
    #[error("{file}{}: {message}", record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Format {
        file: String,
        record: Option<usize>,
        message: String,
    },

    #[error("feature-count mismatch: features.bin declares {declared} rows for {nodes} nodes")]
    FeatureCountMismatch { declared: usize, nodes: usize },

    #[error("{what} {index} out of range (bound {bound})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient classes: need {needed}, {available} retained")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("class {class} has {have} nodes, needs at least {need}")]
    InsufficientSamples { class: usize, have: usize, need: usize },

    #[error("unknown method `{name}`; valid methods: {}", valid.join(", "))]
    UnknownMethod { name: String, valid: Vec<&'static str> },

    #[error("embedding provider: {0}")]
    Provider(String),

    #[error("dimension drift: expected dim {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(file: impl Into<String>, record: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            record,
            message: message.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: usize,
        detail: String,
    },
    #[error("{op}: invalid parameter: {detail}")]
    Parameter { op: &'static str, detail: String },
    #[error("batch norm needs at least 2 samples in train mode, got {0}")]
    DegenerateBatch(usize),
    #[error("label {0} is not 0 or 1")]
    Label(f64),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model {model} expects {expected} input, batch supplies {supplied}")]
    DomainMismatch {
        model: String,
        expected: String,
        supplied: String,
    },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("cannot partition subjects: {0}")]
    Partition(String),
    #[error("training protocol error: {0}")]
    Protocol(String),
    #[error("voting schema error: {0}")]
    Schema(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("{context}: {source}")]
    Annotated {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: usize, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axis,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter {
            op,
            detail: detail.into(),
        }
    }

    /// The innermost error beneath any context annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Annotated { source, .. } => source.root(),
            other => other,
        }
    }

    /// Wraps the error with a context string (model id, fold, path...).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Annotated {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

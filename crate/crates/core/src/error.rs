use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record that does not conform to its line-delimited schema.
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{kind} record references trace `{trace_id}` which has no spans")]
    DanglingTelemetry { trace_id: String, kind: &'static str },

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("graph construction failed for trace `{trace_id}`: {message}")]
    Graph { trace_id: String, message: String },

    #[error("request is unclassifiable: none of the classification keys {keys:?} is present")]
    Unclassifiable { keys: Vec<String> },

    #[error("request type `{0}` has no fitted normal pattern")]
    UnknownRequestType(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in GAT layer {layer} ({stage})")]
    NonFinite { layer: usize, stage: &'static str },

    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures of the numeric core (as opposed to bad input data).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NanLoss { .. })
    }
}

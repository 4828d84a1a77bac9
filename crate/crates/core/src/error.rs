use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("scattering tree would have {nodes} nodes, above the cap of {cap}")]
    TreeTooLarge { nodes: usize, cap: usize },

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("no agent parameters for parent path {0}")]
    MissingAgent(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 1 for usage and
    /// configuration problems, 2 for data problems, 3 for numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. }
            | Error::MissingAgent(_)
            | Error::TreeTooLarge { .. }
            | Error::InvalidSize(_)
            | Error::Precondition(_) => 1,
            Error::NonFinite(_) => 3,
            Error::IsolatedVertex(_)
            | Error::InvalidGraph(_)
            | Error::Shape(_)
            | Error::Label { .. }
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Format { .. } => 2,
        }
    }
}

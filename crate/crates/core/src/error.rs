use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{module} failed at view {view}: {source}")]
    AtView {
        module: &'static str,
        view: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("block {block}: {source}")]
    AtBlock {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn at_view(self, module: &'static str, view: usize) -> Self {
        Error::AtView { module, view, source: Box::new(self) }
    }

    /// Name of the module that produced the innermost error, when known.
    pub fn module(&self) -> Option<&'static str> {
        match self {
            Error::AtView { module, .. } => Some(module),
            Error::AtBlock { source, .. } => source.module(),
            _ => None,
        }
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

use std::path::PathBuf;

use crate::netfile::ParseError;
use crate::tensor::ShapeError;

/// Errors surfaced by the engine, its file formats and the tuner.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error(transparent)]
    Parse(#[from] ParseError),

    /// Failure attributed to a specific network layer.
    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot read parameter file {path}: {source}")]
    ParamIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed parameter payload: {0}")]
    MalformedParams(String),

    #[error("parameter shape mismatch: {0}")]
    ParamShape(String),

    #[error("non-finite value in parameter payload at {field}[{index}]")]
    NonFinite { field: &'static str, index: usize },

    #[error("no parameters registered for layer `{0}`")]
    UnknownParams(String),

    #[error("tuning profile {path}: {message}")]
    Profile { path: PathBuf, message: String },

    #[error("tensor file: {0}")]
    TensorFile(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attaches the offending path to an I/O error.
    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_layer(layer: &str, err: impl Into<Error>) -> Self {
        Error::Layer {
            layer: layer.to_string(),
            source: Box::new(err.into()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

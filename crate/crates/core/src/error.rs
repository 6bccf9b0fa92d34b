use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("array file: {0}")]
    Format(#[from] FormatError),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures decoding an MCTA array container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("degenerate shape {0:?}")]
    Degenerate(Vec<usize>),
    #[error("truncated {what}: need {need} bytes, have {have}")]
    Truncated {
        what: &'static str,
        need: usize,
        have: usize,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("expected shape {expected:?}, file holds {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

/// Coarse failure classes, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::Config(_) | Error::Geometry(_) | Error::InvalidParameter(_) => ErrorClass::Config,
            Error::NonFinite(_) | Error::Diverged { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_layer(self, layer: usize) -> Self {
        match self {
            e @ Error::AtLayer { .. } => e,
            e => Error::AtLayer {
                layer,
                source: Box::new(e),
            },
        }
    }

    /// Layer index attached by [`Error::at_layer`], if any.
    pub fn layer(&self) -> Option<usize> {
        match self {
            Error::AtLayer { layer, .. } => Some(*layer),
            _ => None,
        }
    }

    /// Innermost error, skipping layer context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLayer { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn shape(what: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            what,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

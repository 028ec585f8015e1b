use thiserror::Error;

/// Errors raised anywhere in the training / design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite gradient, update rejected")]
    NonFiniteGradient,
    #[error("integration failed at step {step}: non-finite state {state:?}")]
    Integration { step: usize, state: Vec<f64> },
    #[error("failed to parse {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("{0}")]
    Infeasible(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

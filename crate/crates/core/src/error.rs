use std::path::PathBuf;

/// Errors produced across the engine.
///
/// Variants map onto the CLI exit-code classes through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("build error at layer {index}: {message}")]
    Build { index: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("incompatible weights: {0}")]
    Incompatible(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}, max |grad| {max_abs_grad}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        max_abs_grad: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for data/config problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Diverged { .. } | Error::State(_) => 3,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("stitching error: {0}")]
    Stitching(String),
    #[error("load error for `{stem}`: {message}")]
    Load { stem: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("shape error for parameter `{name}`: expected {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Argument(_) => "argument",
            Error::Generation(_) => "generation",
            Error::Stitching(_) => "stitching",
            Error::Load { .. } => "load",
            Error::Checkpoint(_) => "checkpoint",
            Error::ParamShape { .. } => "param_shape",
            Error::NonFinite { .. } => "non_finite",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use dim_err;

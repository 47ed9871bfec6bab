use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("image too small: {width}x{height} (need at least {min}x{min})")]
    TooSmall { width: usize, height: usize, min: usize },

    #[error("image is not square: {width}x{height}")]
    NotSquare { width: usize, height: usize },

    #[error("filtered back-projection needs at least 2 angles, got {0}")]
    TooFewAngles(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("max-pooling needs even spatial dimensions, got {height}x{width}")]
    OddDimension { height: usize, width: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("class directory {0} contains no images")]
    EmptyClass(PathBuf),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

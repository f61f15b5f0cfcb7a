use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("window of size {size} does not fit a {height}x{width} image")]
    WindowTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),

    #[error("diffusion: {0}")]
    Diffusion(String),

    #[error("denoiser: {0}")]
    Denoiser(String),

    #[error("empty score list: {0}")]
    EmptyScores(&'static str),

    #[error("missing score list for condition `{0}`")]
    MissingScores(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("report format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

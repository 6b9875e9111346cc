use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("extent too small: {0}")]
    ExtentTooSmall(String),

    #[error("trajectory exhausted after {travelled:.4} m of {required:.4} m")]
    TrajectoryExhausted { travelled: f64, required: f64 },

    #[error("no coverage at ({x:.3}, {y:.3})")]
    NoCoverage { x: f64, y: f64 },

    #[error("path alignment: {0}")]
    PathAlignment(String),

    #[error("degenerate sample: zero energy")]
    DegenerateSample,

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at batch {batch}")]
    NonFinite { batch: usize },

    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLengthMismatch { expected: u64, actual: u64 },

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed inputs rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Io { .. })
    }
}

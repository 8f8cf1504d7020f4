use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Misconfigured model or experiment; the message names the offending piece.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("stale cache: forward pass ran at parameter version {cached}, parameters are now at version {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("invalid slate: {0}")]
    InvalidSlate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("episode already complete: every candidate has been picked")]
    EpisodeComplete,

    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("parse error in {path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Short stable tag used in the CLI's machine-parsable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::StaleCache { .. } => "stale_cache",
            Error::InvalidSlate(_) => "invalid_slate",
            Error::InsufficientData(_) => "insufficient_data",
            Error::NonFinite(_) => "non_finite",
            Error::EpisodeComplete => "episode_complete",
            Error::Prerequisite(_) => "prerequisite",
            Error::Integrity(_) => "integrity",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}

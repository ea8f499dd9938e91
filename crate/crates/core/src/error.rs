use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("placement infeasible: placed {placed} of {requested} spheres before the active list ran out")]
    PlacementInfeasible { placed: usize, requested: usize },

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures reading the on-disk dataset and weight formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated record {index}")]
    Truncated { index: usize },

    #[error("corrupt record {index}: {detail}")]
    CorruptRecord { index: usize, detail: String },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

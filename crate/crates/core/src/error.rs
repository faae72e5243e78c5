use thiserror::Error;

/// Errors raised anywhere along the simulation, detection and training chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("preamble index exhausted: v={v} with n_cs={n_cs} needs shift {shift} >= n_zc={n_zc}")]
    IndexExhausted {
        v: usize,
        n_cs: usize,
        shift: usize,
        n_zc: usize,
    },

    #[error("invalid channel config: {0}")]
    InvalidConfig(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("shape mismatch at layer `{layer}`: expected {expected:?}, got {got:?}")]
    Shape {
        layer: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("format version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated tensor block: expected {expected} bytes, found {found}")]
    TruncatedTensor { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

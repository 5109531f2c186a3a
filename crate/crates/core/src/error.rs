use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("polynomial is in {found} form, expected {expected} form")]
    WrongDomain {
        expected: &'static str,
        found: &'static str,
    },

    #[error("operand mismatch: {0}")]
    Mismatch(String),

    #[error("scale mismatch: {left} vs {right} (log2)")]
    ScaleMismatch { left: f64, right: f64 },

    #[error("level exhausted: need {needed} levels, have {available}")]
    LevelExhausted { needed: usize, available: usize },

    #[error("missing key: {0}")]
    MissingKey(String),

    #[error("parameter hash mismatch")]
    ParamsHashMismatch,

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("protocol error (code {code}): {detail}")]
    Protocol { code: u8, detail: String },

    #[error("refresh failed: {0}")]
    Refresh(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("label scheme violation: {0}")]
    Scheme(String),

    #[error("invalid token {token:?}: {reason}")]
    Token { token: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("normalization error: maximum score {max} is not positive")]
    Normalization { max: f64 },

    #[error("embedding retrieval failed for sentence {sentence_id}: {reason}")]
    Retrieval { sentence_id: usize, reason: String },

    #[error("embedding integrity error: {0}")]
    Integrity(String),

    #[error("prompt render error: {0}")]
    Render(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("request rejected with status {status}: {body}")]
    Request { status: u16, body: String },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("replay fixture has no response for request {0}")]
    ReplayMiss(String),

    #[error("alignment error for test sentence {test_id}: {reason}")]
    Alignment { test_id: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Whether this error comes from the network layer rather than from the data.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::Transport { .. } | Error::Request { .. } | Error::ReplayMiss(_)
        )
    }
}

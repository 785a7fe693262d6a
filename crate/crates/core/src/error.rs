use thiserror::Error;

/// Errors raised by the distance-learning stack.
#[derive(Debug, Error)]
pub enum DdlError {
    #[error("invalid action {action} (env has {action_count} actions)")]
    InvalidAction { action: usize, action_count: usize },

    #[error("invalid state {0}")]
    InvalidState(usize),

    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    #[error("trajectory pool is empty")]
    EmptyPool,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("config error for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("preference provider error: {0}")]
    Provider(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DdlError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        DdlError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DdlError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("enumeration limited to n_side <= {limit}, got {n_side}")]
    TooLarge { n_side: usize, limit: usize },

    #[error("{algorithm} did not terminate within {cap} rounds")]
    NonTermination { algorithm: &'static str, cap: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training failure: {0}")]
    Training(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

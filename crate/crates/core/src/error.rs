use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("token {token} is outside the vocabulary of {vocab_size} events")]
    InvalidToken { token: u32, vocab_size: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("outside the valid regime: {0}")]
    OutOfRegime(String),

    #[error("sequence {index}: {source}")]
    AtSequence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("estimator bridge: {0}")]
    Bridge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration-class errors map to exit code 2 in the CLI; everything
    /// else is a runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::InvalidRule(_)
            | Error::Degenerate(_)
            | Error::OutOfRegime(_) => true,
            Error::AtSequence { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("step index {step} out of range for a trace with {steps} steps")]
    StepOutOfRange { step: usize, steps: usize },

    #[error("span {span} ends at byte {end}, inside token {token}")]
    Alignment { span: usize, token: usize, end: usize },

    #[error("endpoint unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("endpoint capability missing: {0}")]
    Capability(String),

    #[error("none of the candidates {candidates:?} appear in the top alternatives")]
    Ambiguous { candidates: Vec<String> },

    #[error("format error: {0}")]
    Format(String),

    #[error("trace {id} hit the {tokens}-token budget before the end of reasoning")]
    Truncated { id: String, tokens: usize },

    #[error("could not extract an answer for {id}: {detail}")]
    MalformedAnswer { id: String, detail: String },

    #[error("trajectory for {id} failed at step {step}: {source}")]
    PartialTrajectory {
        id: String,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Endpoint,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Transport { .. } | Error::Http { .. } | Error::Capability(_) | Error::Ambiguous { .. } => {
                ErrorClass::Endpoint
            }
            Error::PartialTrajectory { source, .. } => source.class(),
            Error::Io(_) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }

    /// Whether retrying the same request might succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

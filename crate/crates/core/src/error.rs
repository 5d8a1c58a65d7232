use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world configuration: {0}")]
    Config(String),

    #[error("symmetric heap exhausted: requested {requested} bytes, {available} bytes free")]
    HeapExhausted { requested: usize, available: usize },

    #[error("invalid allocation request: {0}")]
    BadAllocation(String),

    #[error("context error: {0}")]
    Context(String),

    #[error("PE {rank} failed: {message}")]
    PeFailed { rank: usize, message: String },

    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },

    #[error("script error: {0}")]
    Script(String),

    #[error("unknown routine `{name}`{}", near_miss_suffix(.suggestions))]
    UnknownRoutine {
        name: String,
        suggestions: Vec<String>,
    },

    #[error("routine `{name}` takes {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("{routine}: {message}")]
    Routine { routine: String, message: String },

    #[error("{routine}({args}): {source}")]
    Measurement {
        routine: String,
        args: String,
        #[source]
        source: Box<Error>,
    },

    #[error("measurement failed on another PE")]
    RemoteFailure,

    #[error("start time already passed after retry (delta {delta:.3e} s)")]
    SyncStart { delta: f64 },

    #[error("interrupted")]
    Interrupted,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn near_miss_suffix(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!("; did you mean {}?", suggestions.join(", "))
    }
}

impl Error {
    pub fn routine(routine: &str, message: impl Into<String>) -> Self {
        Error::Routine {
            routine: routine.to_string(),
            message: message.into(),
        }
    }
}

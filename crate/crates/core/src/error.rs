use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid sample: {0}")]
    Sample(String),

    #[error("exact enumeration needs {outcomes} outcomes, above the cap of {cap}; use monte_carlo mode")]
    EnumerationCap { outcomes: f64, cap: u64 },

    #[error("spectral computation failed: {0}")]
    Spectral(String),

    #[error("invalid objective suite: {0}")]
    Objective(String),

    #[error("invalid hyperparameter `{field}`: {reason}")]
    HyperParam { field: &'static str, reason: String },

    #[error("state is missing {0}")]
    MissingState(&'static str),

    #[error("non-finite value at iteration {t}, agent {agent}, field {field}")]
    NonFinite {
        t: u64,
        agent: usize,
        field: &'static str,
    },

    #[error("async runtime deadlock: no eligible event, blocked agents {blocked:?}")]
    Deadlock { blocked: Vec<usize> },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

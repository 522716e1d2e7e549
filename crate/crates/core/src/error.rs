use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A `(agent_id, age)` pair whose behavioral response is still outstanding.
pub type PendingStep = (u64, u32);

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("backend error for agent {agent_id} at age {age}: {message}")]
    Backend {
        agent_id: u64,
        age: u32,
        message: String,
    },

    /// The run could not finish because behavioral responses are missing;
    /// the listed steps are where each affected agent will resume.
    #[error("{} agent-year(s) pending a backend response (first: {:?})", pending.len(), pending.first())]
    Pending { pending: Vec<PendingStep> },

    #[error("run interrupted after {completed} agents; rerun with resume to continue")]
    Interrupted { completed: usize },

    #[error("config hash mismatch on resume: manifest has {expected}, current config is {found}")]
    ConfigMismatch { expected: String, found: String },

    #[error(transparent)]
    Stats(#[from] StatsError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures raised by the model fitters.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("design matrix is singular; collinear terms: {}", terms.join(", "))]
    Collinear { terms: Vec<String> },

    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("complete separation detected: {0}")]
    Separation(String),

    #[error("outcome has a single class: {0}")]
    OneClass(String),

    #[error("no events observed")]
    NoEvents,

    #[error("monotone likelihood: coefficient for {term} diverges")]
    MonotoneLikelihood { term: String },

    #[error("degenerate population: {0}")]
    Degenerate(String),
}

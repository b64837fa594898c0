use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {context}{}", index.map(|i| format!(" (sample {i})")).unwrap_or_default())]
    Numeric {
        context: &'static str,
        index: Option<usize>,
    },

    #[error("capacity error: {what} ({requested} > {limit})")]
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("ingestion error in {}{}: {message}", file.display(), line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Ingestion {
        file: PathBuf,
        line: Option<u64>,
        message: String,
    },

    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error("attack failed at restart {restart}, step {step}: {source}")]
    Attack {
        restart: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reporting error: {0}")]
    Reporting(String),

    #[error("undefined increment ratio: AEOD before unlearning is 0 (absolute change {delta})")]
    UndefinedRatio { delta: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(context: &'static str) -> Self {
        Error::Numeric {
            context,
            index: None,
        }
    }
}

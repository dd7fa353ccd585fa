use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, estimation and the CLI runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A non-finite value showed up where a finite one was required.
    #[error("numerical fault in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// `|D_H G|_H` fell below the configured floor at the evaluation point.
    #[error("gradient norm {norm:e} below floor {floor:e}")]
    GradientTooSmall { norm: f64, floor: f64 },

    #[error("configuration rejected with {} error(s):\n{}", .0.len(), render_list(.0))]
    Config(Vec<String>),

    #[error("expression error at position {position}: {message}")]
    Expr { position: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),

    #[error("job `{job}`: {source}")]
    Job {
        job: String,
        #[source]
        source: Box<Error>,
    },
}

fn render_list(items: &[String]) -> String {
    items
        .iter()
        .map(|s| format!("  - {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn in_job(self, job: &str) -> Self {
        Error::Job {
            job: job.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

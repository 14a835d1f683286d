//! Error types shared across the pipeline.

use thiserror::Error;

/// Errors produced by the library. Each variant names the stage it came
/// from so the CLI can report a categorized failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("eval error: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short category label used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Data { .. } => "corpus",
            Error::Config(_) => "config",
            Error::Graph(_) => "graph",
            Error::Model(_) => "model",
            Error::Checkpoint(_) => "checkpoint",
            Error::Eval(_) => "eval",
        }
    }
}

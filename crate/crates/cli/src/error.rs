use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// A problem document failed to parse or validate.
    #[error("{}: {message}", location(path, *line, *column))]
    Document {
        path: PathBuf,
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Model(#[from] contract_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

fn location(path: &Path, line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!("{}:{l}:{c}", path.display()),
        (Some(l), None) => format!("{}:{l}", path.display()),
        _ => path.display().to_string(),
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Document { .. } => "document",
            CliError::Model(_) => "model",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
            CliError::Json(_) => "serialization",
        }
    }

    pub fn to_document(&self) -> ErrorDocument {
        let (path, line, column) = match self {
            CliError::Document {
                path, line, column, ..
            } => (Some(path.display().to_string()), *line, *column),
            CliError::Io { path, .. } => (Some(path.display().to_string()), None, None),
            _ => (None, None, None),
        };
        ErrorDocument {
            status: "error",
            kind: self.kind(),
            message: self.to_string(),
            path,
            line,
            column,
        }
    }
}

/// Machine-readable failure report, written as `error.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorDocument {
    pub status: &'static str,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

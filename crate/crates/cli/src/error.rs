use std::path::Path;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub problem: String,
}

impl FieldError {
    pub fn new(field: &str, problem: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            problem: problem.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {} problem(s)", .0.len())]
    Config(Vec<FieldError>),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Library(#[from] robust_fm::error::Error),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    fn kind(&self) -> &'static str {
        use robust_fm::error::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Library(E::Infeasible(_) | E::RoundInfeasible { .. }) => "infeasible",
            CliError::Library(E::Numerical(_) | E::Reducible(_)) => "numerical",
            CliError::Library(_) => "invalid_input",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "infeasible" => 3,
            _ => 1,
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        let mut v = json!({ "status": "error", "kind": self.kind(), "message": self.to_string() });
        if let CliError::Config(fields) = self {
            v["fields"] = json!(fields);
        }
        v.to_string()
    }
}

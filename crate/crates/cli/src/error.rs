use std::path::Path;

use serde::Serialize;

/// A failure reported on stderr as a single JSON object.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub problems: Vec<String>,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn config(problems: Vec<String>) -> Self {
        CliError {
            kind: "invalid_config".into(),
            message: format!("{} configuration problem(s)", problems.len()),
            problems,
            exit_code: 2,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage".into(),
            message: message.into(),
            problems: Vec::new(),
            exit_code: 2,
        }
    }

    pub fn missing_artifact(path: &Path, producer: &str) -> Self {
        CliError {
            kind: "missing_artifact".into(),
            message: format!("{} not found; run `{producer}` first", path.display()),
            problems: Vec::new(),
            exit_code: 1,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        dialect_id::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        CliError {
            kind: "internal".into(),
            message: e.to_string(),
            problems: Vec::new(),
            exit_code: 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<dialect_id::Error> for CliError {
    fn from(e: dialect_id::Error) -> Self {
        CliError {
            kind: e.kind().into(),
            message: e.to_string(),
            problems: Vec::new(),
            exit_code: 1,
        }
    }
}

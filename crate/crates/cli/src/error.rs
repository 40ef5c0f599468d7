// SPDX-License-Identifier: MIT OR Apache-2.0

//! Front-end errors and their exit codes.

use serde_json::json;

/// Exit code for configuration and usage problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running a valid configuration.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("invalid value for `{key}`: {message}")]
    InvalidKey { key: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] circuitscope::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn invalid(key: &str, message: impl std::fmt::Display) -> Self {
        Self::InvalidKey {
            key: key.to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(_) => EXIT_RUNTIME,
            _ => EXIT_CONFIG,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingKey(_) => "missing_key",
            Self::InvalidKey { .. } => "invalid_key",
            Self::Usage(_) => "usage",
            Self::Core(e) => e.kind(),
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            Self::MissingKey(k) | Self::InvalidKey { key: k, .. } => Some(k),
            _ => None,
        }
    }

    /// Single-line JSON written to stderr.
    pub fn to_json(&self) -> String {
        let mut error = json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        if let Some(k) = self.key() {
            error["key"] = json!(k);
        }
        json!({ "error": error, "exit_code": self.exit_code() }).to_string()
    }
}

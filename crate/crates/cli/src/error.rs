use std::path::Path;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{message}")]
    Config { message: String, details: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Solver(#[from] grobust::Error),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    keys: &'a [String],
}

#[derive(Serialize)]
struct Envelope<'a> {
    error: ErrorBody<'a>,
}

impl CliError {
    pub fn config(message: String, details: Vec<String>) -> Self {
        CliError::Config { message, details }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Solver(_) => "solver",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } | CliError::Solver(_) => 3,
        }
    }

    /// One-line JSON object for the error stream.
    pub fn to_json(&self) -> String {
        let keys: &[String] = match self {
            CliError::Config { details, .. } => details,
            _ => &[],
        };
        serde_json::to_string(&Envelope {
            error: ErrorBody {
                kind: self.kind(),
                message: self.to_string(),
                keys,
            },
        })
        .expect("error envelope serializes")
    }
}

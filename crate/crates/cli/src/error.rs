use std::fmt;

/// Failure classes of the harness; each maps to its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// The configuration is malformed or violates an invariant. Exit 2.
    Config { path: String, message: String },
    /// Something failed while computing or writing results. Exit 1.
    Runtime(anyhow::Error),
    /// A checker found violations. Exit 3.
    Violations { count: usize },
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime(_) => 1,
            CliError::Violations { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { path, message } if path.is_empty() => write!(f, "config error: {message}"),
            CliError::Config { path, message } => write!(f, "config error at {path}: {message}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e:#}"),
            CliError::Violations { count } => write!(f, "{count} violation(s) found"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<perfrl_core::Error> for CliError {
    fn from(e: perfrl_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Config {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("config uses analysis `{found}`, but `{command}` needs {expected}")]
    WrongAnalysis {
        command: &'static str,
        expected: &'static str,
        found: &'static str,
    },

    #[error(transparent)]
    Core(#[from] qscope_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn parse(path: &Path, e: serde_json::Error) -> Self {
        let line = match e.line() {
            0 => None,
            l => Some(l),
        };
        CliError::Config {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        }
    }

    /// A module-level validation error, pinned to the first line that
    /// mentions the offending key.
    pub fn validation(path: &Path, text: &str, e: qscope_core::Error) -> Self {
        let line = match &e {
            qscope_core::Error::InvalidParameter { name, .. } => {
                let key = format!("\"{name}\"");
                text.lines().position(|l| l.contains(&key)).map(|i| i + 1)
            }
            _ => None,
        };
        CliError::Config {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for numerical failure, 1 for I/O trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::WrongAnalysis { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }
}

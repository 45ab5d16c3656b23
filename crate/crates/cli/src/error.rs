use std::path::PathBuf;

/// Failures of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or invalid configuration, data or arguments (exit 2).
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    /// The estimation or simulation itself failed (exit 1).
    #[error("{0}")]
    Runtime(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: deconv_ht_core::Error,
    },

    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Input { .. } => 2,
            Self::Runtime(_) | Self::Core { .. } | Self::Write { .. } => 1,
        }
    }

    pub(crate) fn core(context: impl Into<String>) -> impl FnOnce(deconv_ht_core::Error) -> Self {
        let context = context.into();
        move |source| Self::Core { context, source }
    }

    pub(crate) fn input(path: &std::path::Path, message: impl Into<String>) -> Self {
        Self::Input {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

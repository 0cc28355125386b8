use std::path::PathBuf;

use thiserror::Error;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// A verification suite found a failing case.
pub const EXIT_VERIFY_FAILED: i32 = 1;
/// Bad flags, unreadable or invalid configuration.
pub const EXIT_USAGE: i32 = 2;
/// Training produced a non-finite loss.
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] headwise::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerificationFailed(_) => EXIT_VERIFY_FAILED,
            CliError::Core(headwise::Error::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_USAGE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::VerificationFailed("x".into()).exit_code(), EXIT_VERIFY_FAILED);
        let diverged = headwise::Error::Diverged { step: 3, loss: f64::NAN };
        assert_eq!(CliError::from(diverged).exit_code(), EXIT_DIVERGED);
        let lookup = headwise::Error::Lookup {
            what: "plan",
            name: "x".into(),
            registered: vec![],
        };
        assert_eq!(CliError::from(lookup).exit_code(), EXIT_USAGE);
        let io = CliError::io("missing.json", std::io::ErrorKind::NotFound.into());
        assert_eq!(io.exit_code(), EXIT_USAGE);
        assert!(io.to_string().starts_with("missing.json"));
    }
}

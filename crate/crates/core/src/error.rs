use thiserror::Error;

/// Errors produced by the numeric core, the adapters and the planner.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands have incompatible shapes.
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// A slice or element index fell outside a matrix.
    #[error("index out of range in {op}: [{start}, {end}) exceeds extent {extent}")]
    Index {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An invalid configuration value; `path` names the offending field.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A named preset does not exist.
    #[error("unknown {what} `{name}`; registered: {}", registered.join(", "))]
    Lookup {
        what: &'static str,
        name: String,
        registered: Vec<String>,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A real argument fell outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),
    /// Two objects that must agree in size do not.
    #[error("shape error: {0}")]
    Shape(String),
    /// A configuration value, task description, or key is invalid.
    #[error("configuration error: {0}")]
    Config(String),
    /// A non-finite value appeared while processing the item at `index`.
    #[error("numeric error at batch index {index}: {detail}")]
    Numeric { index: usize, detail: String },
    /// Sample statistics could not be formed (too few or empty samples).
    #[error("statistics error: {0}")]
    Statistics(String),
    /// A policy ratio could not be formed because the old policy assigns
    /// zero probability to the action.
    #[error("ratio error: {0}")]
    Ratio(String),
    /// Checkpoint architecture differs from the configured one.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    /// Malformed checkpoint bytes.
    #[error("checkpoint format error: {0}")]
    Format(String),
    /// A strategy name is not present in its registry.
    #[error("unknown {family} '{name}' (known: {known})")]
    UnknownStrategy {
        family: &'static str,
        name: String,
        known: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 covers configuration and input problems, 3 checkpoint/architecture
    /// mismatches, 4 numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CheckpointMismatch(_) => 3,
            Error::Numeric { .. } | Error::Ratio(_) => 4,
            _ => 2,
        }
    }
}

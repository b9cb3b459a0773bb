use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("sampler failure at iteration {iteration} while updating {component}: {source}")]
    Sampler {
        iteration: usize,
        component: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Toml(_) => 2,
            Error::InvalidInput(_)
            | Error::InvalidState(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 3,
            Error::Numeric(_) | Error::Internal(_) => 4,
            Error::Sampler { source, .. } => match source.as_ref() {
                Error::Numeric(_) | Error::Internal(_) => 4,
                other => other.exit_code(),
            },
        }
    }

    pub(crate) fn in_sweep(self, iteration: usize, component: &'static str) -> Error {
        Error::Sampler {
            iteration,
            component,
            source: Box::new(self),
        }
    }
}

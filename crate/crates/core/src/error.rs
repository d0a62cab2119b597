use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the formula being evaluated.
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    /// The fading channel has no diffusion, so the Marcum argument in c1 is infinite.
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("degenerate deployment: {0}")]
    DegenerateDeployment(String),

    #[error("{what} did not converge after {iterations} iterations (last iterate {last})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. } => 2,
            Error::NonConvergence { .. } => 4,
            Error::Io(_) | Error::Json(_) => 1,
            _ => 3,
        }
    }
}

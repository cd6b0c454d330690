use std::fmt;

/// Coarse failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments, configuration or record contents.
    Validation,
    /// Missing, dangling or insufficient data.
    Data,
    /// A numerical routine failed to converge or diverged.
    Solver,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Validation => "validation",
            ErrorKind::Data => "data",
            ErrorKind::Solver => "solver",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("line {line}: malformed record: {reason}")]
    Parse { line: usize, reason: String },

    #[error("{}field `{field}`: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Validation {
        line: Option<usize>,
        field: String,
        reason: String,
    },

    #[error("unresolved snippet ids: {}", missing.join(", "))]
    Join { missing: Vec<String> },

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate bandwidth: all points are identical")]
    DegenerateBandwidth,

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("solver did not converge in {iterations} iterations (KKT residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_)
            | Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Config(_)
            | Error::DegenerateBandwidth => ErrorKind::Validation,
            Error::Join { .. } | Error::Data(_) | Error::Io(_) => ErrorKind::Data,
            Error::Training(_) | Error::Divergence { .. } | Error::Solver { .. } => {
                ErrorKind::Solver
            }
        }
    }

    pub(crate) fn field(field: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            line: None,
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// Variants are grouped so the CLI can map them onto exit codes:
/// configuration problems, numerical failures and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema violation in {field}: {message}")]
    Schema { field: String, message: String },

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    PowerFlow { iterations: usize, mismatch: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("equilibrium residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    Equilibrium { residual: f64, tolerance: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing reduced model for load level {0}")]
    MissingModel(f64),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 4,
            Error::PowerFlow { .. }
            | Error::Singular(_)
            | Error::Equilibrium { .. }
            | Error::Numerical(_) => 3,
            _ => 2,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::PowerFlow { .. } => "power_flow",
            Error::Singular(_) => "singular",
            Error::Equilibrium { .. } => "equilibrium",
            Error::Numerical(_) => "numerical",
            Error::MissingModel(_) => "missing_model",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

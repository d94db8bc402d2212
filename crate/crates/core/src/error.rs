use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("|alpha|^2 = {norm_sqr} exceeds the truncation-safety limit n_max/4 = {limit} (alpha = {re}{im:+}i)")]
    TruncationUnsafe {
        re: f64,
        im: f64,
        norm_sqr: f64,
        limit: f64,
    },

    #[error("operator acts on the wrong space: expected {expected}, found {found}")]
    WrongSpace {
        expected: &'static str,
        found: &'static str,
    },

    #[error("state violates density-operator invariant: {0}")]
    NotDensity(String),

    #[error("numerically unstable evolution: {0}")]
    Unstable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Process exit status used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Unstable(_) => 4,
            Error::Io(_) => 5,
            _ => 3,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Io(std::io::Error::other(format!("{other:?}"))),
        }
    }
}

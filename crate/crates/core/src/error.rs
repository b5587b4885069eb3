use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("refinement error: {0}")]
    Refinement(String),

    /// Refinement would need elements below double precision resolution.
    #[error("resolution limit: {0}")]
    Resolution(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Quadrature produced a non-finite matrix or load entry.
    #[error("assembly error: {0}")]
    Assembly(String),

    /// The Galerkin matrix is not symmetric positive definite.
    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("at iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Strips iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 for bad input or configuration, 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Parse { .. } | Error::Io(_) | Error::Unsupported(_) => 2,
            _ => 3,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Assembly(_)
                | Error::Factorization(_)
                | Error::Internal(_)
                | Error::Resolution(_)
        )
    }
}

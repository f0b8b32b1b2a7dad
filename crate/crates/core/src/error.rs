use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },

    #[error("input region is empty")]
    EmptyRegion,

    #[error("LP solver numerical breakdown: {0}")]
    LpNumerical(String),

    #[error("LP unexpectedly {0}")]
    LpStatus(&'static str),

    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CertError> = std::result::Result<T, E>;

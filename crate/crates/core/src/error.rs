use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unstable time step: CFL ratio {ratio:.6} exceeds {limit}")]
    Unstable { ratio: f64, limit: f64 },

    #[error("degenerate reference: reference state has zero energy")]
    DegenerateReference,

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input or violated precondition.
    #[error("precondition: {0}")]
    Precondition(String),
    /// A solver did not converge or a guard tripped.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// No real unstable eigenvalue (p <= 1 + 4/d).
    #[error("spectrally stable configuration (p = {p}, dim = {dim}): no real unstable eigenvalue")]
    SpectrallyStable { p: f64, dim: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_precondition(&self) -> bool {
        matches!(self, Error::Precondition(_) | Error::SpectrallyStable { .. } | Error::GridMismatch)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn pre(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}

pub(crate) fn num(msg: impl Into<String>) -> Error {
    Error::Numerical(msg.into())
}

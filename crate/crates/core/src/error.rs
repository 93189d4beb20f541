use num_complex::Complex64;

use crate::spectral::Field;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("blow-up detected at t = {t}")]
    BlowUp { t: f64, last: Box<Field> },
    #[error("quadrature did not converge: estimate {estimate:e} above tolerance {tol:e}")]
    Accuracy {
        value: Complex64,
        estimate: f64,
        tol: f64,
    },
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

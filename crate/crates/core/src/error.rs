use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("timestep {t} out of range {lo}..={hi}")]
    Index { t: usize, lo: usize, hi: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    Shape { left: [usize; 3], right: [usize; 3] },

    #[error("degenerate density: variance is zero")]
    DegenerateDensity,

    #[error("quadrature did not reach tolerance {tol:e} (last change {change:e} at order {order})")]
    Precision { tol: f64, change: f64, order: usize },

    #[error("format error in {path} at offset {offset}: {msg}")]
    Format { path: PathBuf, offset: u64, msg: String },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

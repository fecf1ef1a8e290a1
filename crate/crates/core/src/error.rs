use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The general rigid-RMSD kernel produced a clearly negative square,
    /// which means the inertia tensor and center were not taken in the frame
    /// the transform acts in.
    #[error("inconsistent reference frame: RMSD^2 evaluated to {0}")]
    InconsistentFrame(f64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: molecule {molecule} has element sequence {found:?}, expected {expected:?}")]
    ElementMismatch {
        path: PathBuf,
        molecule: usize,
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("{path}: molecule {molecule} is not a rigid copy of the template (registration RMSD {residual:.3e} A)")]
    Registration {
        path: PathBuf,
        molecule: usize,
        residual: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

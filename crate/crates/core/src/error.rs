use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
    Convergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("all points coincide, bandwidth would be zero")]
    ZeroBandwidth,

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {0:e})")]
    Asymmetric(f64),

    #[error("symmetric eigensolver did not converge within {0} iterations")]
    EigenNonConvergence(usize),

    #[error("need at least 3 eigenvalues for dimension selection, got {0}")]
    TooFewEigenvalues(usize),

    #[error("eigenvalue {index} is {value:e}; too close to zero for a Nyström extension")]
    IllConditionedExtension { index: usize, value: f64 },

    #[error("new point {0} lies outside the support of the training sample (extended sqrt(pi) is not positive)")]
    ExtensionDomain(usize),

    #[error("reference distance between rows {i} and {j} is zero")]
    ZeroReferenceDistance { i: usize, j: usize },

    #[error("non-finite intermediate value in layer {0}")]
    NonFiniteLayer(usize),

    #[error("training diverged at epoch {0} (loss is not finite)")]
    Diverged(usize),

    #[error("no convergence after {iterations} iterations (final gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::EmptySample
            | Error::Shape(_)
            | Error::NonFinite { .. }
            | Error::ZeroReferenceDistance { .. }
            | Error::Parse { .. }
            | Error::File { .. }
            | Error::Io(_) => ErrorClass::Data,
            Error::ZeroBandwidth
            | Error::Asymmetric(_)
            | Error::TooFewEigenvalues(_)
            | Error::IllConditionedExtension { .. }
            | Error::ExtensionDomain(_)
            | Error::NonFiniteLayer(_) => ErrorClass::Numerical,
            Error::EigenNonConvergence(_) | Error::Diverged(_) | Error::NonConvergence { .. } => {
                ErrorClass::Convergence
            }
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("covariance determinant {det:.3e} is too small to evaluate the density")]
    SingularCovariance { det: f64 },

    #[error("split produced a degenerate child: every principal scale collapsed to the floor")]
    DegenerateChild,

    #[error("cannot merge Gaussians with total opacity mass {total}")]
    ZeroMass { total: f64 },

    #[error("metric requires at least one record")]
    EmptyInput,

    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),

    #[error("invalid plane: {0}")]
    InvalidPlane(String),

    #[error("degenerate prism: {0}")]
    DegeneratePrism(String),

    #[error("closest-point projection diverged after {steps} steps (|B| = {residual:.3e})")]
    ProjectionDiverged { steps: usize, residual: f64 },

    #[error("inhomogeneity pass stopped after {rounds} rounds with {remaining} gaussians still above threshold")]
    RoundsExhausted { rounds: usize, remaining: usize },

    #[error("invalid edit spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: format error: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: vertex {vertex}: property `{property}` is not finite ({value})")]
    Value {
        path: PathBuf,
        vertex: usize,
        property: String,
        value: f32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

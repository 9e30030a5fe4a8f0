use thiserror::Error;

use crate::graph::VariableId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle} rad is at the log branch point (pi)")]
    BranchPoint { angle: f64 },

    #[error("point with depth {depth} m is behind the camera (corner {corner})")]
    BehindCamera { corner: usize, depth: f64 },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid board: {0}")]
    InvalidBoard(String),

    #[error("invalid isometry: {0}")]
    InvalidIsometry(String),

    #[error("dataset failed validation:\n{}", .0.join("\n"))]
    InvalidDataset(Vec<String>),

    #[error("unsupported dataset schema `{0}`")]
    UnsupportedSchema(String),

    #[error("factor {factor} references missing variable {variable}")]
    MissingVariable { factor: String, variable: VariableId },

    #[error("camera {camera}: too few observations ({count} detections, need at least 3)")]
    TooFewObservations { camera: usize, count: usize },

    #[error(
        "camera {camera}: insufficient motion, robot rotation axes do not span two dimensions \
         (second singular value {sigma2:.3e})"
    )]
    InsufficientMotion { camera: usize, sigma2: f64 },

    #[error("unknown camera id {0}")]
    UnknownCamera(usize),

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("no positive-depth pose decomposition exists")]
    Cheirality,

    #[error("pnp failed for camera {camera} at timestep {timestep}: {source}")]
    Pnp {
        camera: usize,
        timestep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("damped normal equations are singular at iteration {iteration}")]
    LinearSolve { iteration: usize },

    #[error("non-finite residual in factor {factor}")]
    NonFiniteResidual { factor: String },

    #[error("factor {factor}: {source}")]
    Factor {
        factor: String,
        #[source]
        source: Box<Error>,
    },

    #[error("camera {camera} has only {count} detections (need at least 3)")]
    EmptyVisibility { camera: usize, count: usize },

    #[error("invalid scene specification: {0}")]
    InvalidSpec(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the name of the factor that produced it.
    pub(crate) fn in_factor(self, factor: impl Into<String>) -> Error {
        match self {
            e @ (Error::MissingVariable { .. } | Error::NonFiniteResidual { .. }) => e,
            e => Error::Factor {
                factor: factor.into(),
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, looking through factor and pnp wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Factor { source, .. } | Error::Pnp { source, .. } => source.root(),
            e => e,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite coordinate at point {0}")]
    NonFinitePoint(usize),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate cloud: {0}")]
    DegenerateCloud(String),

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("alpha shape keeps only {kept} of {total} points in its largest component")]
    AlphaTooSmall { kept: usize, total: usize },

    #[error("alpha shape has no closed boundary")]
    AlphaDegenerate,

    #[error("descriptor length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("batch size mismatch: {front} front scans vs {back} back scans")]
    SizeMismatch { front: usize, back: usize },

    #[error("degenerate correspondence: {0}")]
    DegenerateCorrespondence(String),

    #[error("no camera views supplied")]
    NoViews,

    #[error("cloud has {have} points, need at least {need} for the neighborhood size")]
    TooFewNeighbors { have: usize, need: usize },

    #[error("only {have} correspondences survived, need {need}")]
    InsufficientCorrespondences { have: usize, need: usize },

    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("invalid fragment spec: {0}")]
    InvalidSpec(String),

    #[error("could not draw {wanted} distinct outlines after {attempts} attempts")]
    DistinctnessFailure { wanted: usize, attempts: usize },

    #[error("PLY: {0}")]
    Ply(String),

    #[error("mask image: {0}")]
    Mask(String),

    #[error("config: {0}")]
    Config(String),

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
}

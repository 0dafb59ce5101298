use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("invalid radius {0}: must be finite and non-negative")]
    InvalidRadius(f64),

    #[error("invalid spacing {0}: must be finite and positive")]
    InvalidSpacing(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("stable area is empty")]
    EmptyStableArea,

    #[error("neighbourhood has {found} points, at least 3 are required")]
    InsufficientNeighbors { found: usize },

    #[error("unknown feature id `{0}`")]
    UnknownFeature(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("all samples are identical, a two-cluster solution does not exist")]
    Degenerate,

    #[error("building {0} has no points")]
    EmptyBuilding(u32),

    #[error("class {0} has no samples")]
    EmptyClass(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is {distance:.3} m from the centerline (limit {limit:.3} m)")]
    FarFromTrack { distance: f64, limit: f64 },

    #[error("ray origin is off the road (lateral offset {offset:.3} m)")]
    OffRoadOrigin { offset: f64 },

    #[error("vehicle state became non-finite")]
    NonFiniteState,

    #[error("braking calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("replay buffer holds {have} transitions, update needs {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("step called on a terminated environment; call reset first")]
    SteppingTerminatedEnv,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing run artifacts in {}: {what}", dir.display())]
    MissingRuns { dir: PathBuf, what: String },

    #[error("i/o failure on {}: {source}", path.display())]
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

    /// True for errors caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

//! Crate-wide error type.

/// Errors shared across the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Network architecture violates a structural precondition.
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// A vector or matrix did not have the expected shape.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A computation produced NaN/inf and was aborted.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Dataset construction left too few points to be usable.
    #[error("dataset too small: {0}")]
    TooSmallDataset(String),

    /// Requested trajectory length exceeds the available subset.
    #[error("infeasible trajectory: requested length {requested}, subset has {available}")]
    InfeasibleTrajectory { requested: usize, available: usize },

    /// Pool max equals pool min; scores cannot be normalized.
    #[error("degenerate pool range: min {min} == max {max}")]
    DegeneratePoolRange { min: f64, max: f64 },

    /// A configuration value failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A value was out of its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Checkpoint or artifact file is malformed.
    #[error("bad file format: {0}")]
    Format(String),

    /// A pipeline stage failed; carries the stage name for diagnostics.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fluent stage labeling for fallible pipeline steps.
pub trait ResultExt<T> {
    fn in_stage(self, stage: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn in_stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

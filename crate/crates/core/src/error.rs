use thiserror::Error;

use crate::atlas::Sheet;

pub type Result<T> = std::result::Result<T, PlimError>;

#[derive(Debug, Error)]
pub enum PlimError {
    #[error("integration diverged at t = {t}")]
    IntegrationDiverged { t: f64, last_state: Vec<f64> },
    #[error("coarse point {point:?} lies outside the atlas domain")]
    OutOfDomain { point: Vec<f64> },
    #[error("sheet {sheet} is pruned or undefined at {point:?}")]
    Pruned { sheet: u64, point: Vec<f64> },
    #[error("no candidate sheet in block {block:?}")]
    NoCandidate { block: Vec<i64> },
    #[error("sheet {0} is not present in the atlas")]
    MissingSheet(u64),
    #[error("selection distance {distance} exceeds threshold {threshold}")]
    NoSheet { distance: f64, threshold: f64 },
    #[error("singular coarse state could not be escaped after {retries} perturbations")]
    UnresolvableSingularity { retries: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("solver objective {objective:e} above acceptance threshold {threshold:e}")]
    SolverFailed {
        objective: f64,
        threshold: f64,
        best: Box<Sheet>,
    },
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt atlas file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty series")]
    EmptySeries,
    #[error("objective is not finite")]
    NonFiniteObjective,
    #[error("{context}: {source}")]
    Located {
        context: String,
        #[source]
        source: Box<PlimError>,
    },
}

impl PlimError {
    pub fn precondition(msg: impl Into<String>) -> Self {
        PlimError::Precondition(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        PlimError::Config(msg.into())
    }

    pub fn within(self, context: impl Into<String>) -> Self {
        PlimError::Located {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

use thiserror::Error;

use crate::data::DataError;
use crate::estimators::EstimatorError;
use crate::learners::LearnerError;
use crate::partition::PartitionError;

/// Errors raised by the reductions and the layers above them.
#[derive(Debug, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("{0}")]
    Unsupported(String),
    #[error("censoring survival is zero at time {time} needed by subject `{id}`")]
    ZeroCensoringSurvival { id: String, time: f64 },
    #[error("pseudo-values are not defined for left-truncated data")]
    LeftTruncated,
    #[error("at least two subjects are required, got {0}")]
    TooFewSubjects(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

use survreduce::data::DataError;
use survreduce::estimators::EstimatorError;
use survreduce::eval::EvalError;
use survreduce::learners::LearnerError;
use survreduce::partition::PartitionError;
use survreduce::simulate::SimulateError;
use survreduce::ReductionError;
use thiserror::Error;

use crate::config::ConfigError;

/// A failure classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        let msg = e.to_string();
        match e {
            PartitionError::NoIntervals | PartitionError::BadWidth(_) | PartitionError::BadCuts => {
                CliError::Config(msg)
            }
            _ => CliError::Data(msg),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LearnerError> for CliError {
    fn from(e: LearnerError) -> Self {
        let msg = e.to_string();
        match e {
            LearnerError::Formula(_) | LearnerError::BadParameter(_) | LearnerError::EmptyHoldout => {
                CliError::Config(msg)
            }
            LearnerError::Singular(_)
            | LearnerError::NotConverged { .. }
            | LearnerError::NonFiniteGradient { .. } => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<ReductionError> for CliError {
    fn from(e: ReductionError) -> Self {
        let msg = e.to_string();
        match e {
            ReductionError::Data(e) => e.into(),
            ReductionError::Partition(e) => e.into(),
            ReductionError::Estimator(e) => e.into(),
            ReductionError::Learner(e) => e.into(),
            ReductionError::Unsupported(_) | ReductionError::Invalid(_) => CliError::Config(msg),
            ReductionError::ZeroCensoringSurvival { .. } => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::Reduction(e) => e.into(),
            EvalError::TooFewFolds(_)
            | EvalError::BadHorizon(_)
            | EvalError::UnknownParameter(_)
            | EvalError::ParameterMismatch { .. } => CliError::Config(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::BadParameter(m) => CliError::Config(m),
            SimulateError::Data(e) => e.into(),
        }
    }
}

//! Built-in learners and the contract reductions fit them through.

pub mod design;
pub mod gbt;
pub mod glm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use design::{DesignContext, DesignMatrix, Encoder, RowInput};
pub use gbt::{fit_gbt, GbtData, GbtFit, GbtParams, Loss};
pub use glm::{fit_glm, Family, GlmFit};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("formula error: {0}")]
    Formula(String),
    #[error("response, offset, weights and design have different lengths")]
    LengthMismatch,
    #[error("no rows with positive weight")]
    EmptyData,
    #[error("{0}")]
    BadResponse(String),
    #[error("{0}")]
    BadParameter(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("IRLS did not converge after {iterations} iterations (penalized deviance {deviance})")]
    NotConverged {
        iterations: usize,
        deviance: f64,
        coefficients: Vec<f64>,
    },
    #[error("non-finite gradient in boosting round {round}")]
    NonFiniteGradient { round: usize },
    #[error("early stopping requested without a non-empty holdout")]
    EmptyHoldout,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// Which learner to fit and with what hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LearnerSpec {
    Glm {
        /// Ridge penalty, intercept excluded.
        lambda: f64,
    },
    Gbt(GbtParams),
}

impl LearnerSpec {
    pub fn glm() -> Self {
        LearnerSpec::Glm { lambda: 0.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Glm { .. } => "glm",
            LearnerSpec::Gbt(_) => "gbt",
        }
    }

    /// Whether fitting needs a holdout split.
    pub fn wants_holdout(&self) -> bool {
        matches!(self, LearnerSpec::Gbt(p) if p.early_stop_rounds > 0)
    }
}

/// What the learner is asked to model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Counts with log-exposure offset.
    Poisson,
    /// Binary or fractional labels.
    Logistic,
    /// Real-valued targets.
    Regression,
}

impl Objective {
    fn family(self) -> Family {
        match self {
            Objective::Poisson => Family::PoissonLog,
            Objective::Logistic => Family::BinomialLogit,
            Objective::Regression => Family::GaussianIdentity,
        }
    }

    fn loss(self) -> Loss {
        match self {
            Objective::Poisson => Loss::Poisson,
            Objective::Logistic => Loss::Logistic,
            Objective::Regression => Loss::Squared,
        }
    }

    pub fn inverse_link(self, eta: f64) -> f64 {
        self.family().inverse_link(eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LearnerFit {
    Glm(GlmFit),
    Gbt(GbtFit),
}

impl LearnerFit {
    /// Link-scale predictions without offset.
    pub fn predict_link(&self, x: &DesignMatrix) -> Vec<f64> {
        match self {
            LearnerFit::Glm(f) => f.predict_link(x),
            LearnerFit::Gbt(f) => f.predict_link(x),
        }
    }

    pub fn predict_response(&self, x: &DesignMatrix) -> Vec<f64> {
        match self {
            LearnerFit::Glm(f) => f.predict_response(x),
            LearnerFit::Gbt(f) => f.predict_response(x),
        }
    }

    fn names(&self) -> &[String] {
        match self {
            LearnerFit::Glm(f) => &f.names,
            LearnerFit::Gbt(f) => &f.names,
        }
    }

    /// Checks that `x` has the columns this fit was trained on.
    pub fn check_schema(&self, x: &DesignMatrix) -> Result<(), LearnerError> {
        if self.names() == x.names.as_slice() {
            Ok(())
        } else {
            Err(LearnerError::SchemaMismatch(format!(
                "model expects columns [{}], got [{}]",
                self.names().join(", "),
                x.names.join(", ")
            )))
        }
    }
}

/// Fits `spec` to `train`. The holdout is used only by boosted trees with
/// early stopping.
pub fn fit_learner(
    spec: &LearnerSpec,
    objective: Objective,
    train: &GbtData,
    valid: Option<&GbtData>,
) -> Result<LearnerFit, LearnerError> {
    match spec {
        LearnerSpec::Glm { lambda } => fit_glm(
            train.x,
            train.y,
            train.offset,
            train.weights,
            objective.family(),
            *lambda,
        )
        .map(LearnerFit::Glm),
        LearnerSpec::Gbt(params) => {
            fit_gbt(train, objective.loss(), params, valid).map(LearnerFit::Gbt)
        }
    }
}

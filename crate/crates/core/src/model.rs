//! One entry point for fitting any reduction and a versioned on-disk form
//! of the result.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureRows, FeatureSchema, SurvivalTask, TaskKind};
use crate::error::ReductionError;
use crate::estimators::{kaplan_meier, StepFunction};
use crate::learners::LearnerSpec;
use crate::partition::{CensoringRule, CutStrategy};
use crate::reduce_dist::{fit_distribution, DistKind, DistOptions, FittedReduction, SurvivalCurve};
use crate::reduce_point::{
    crm_fit, crm_targets, default_taus, ipcw_fit, ipcw_transform, pseudo_values, pv_fit, CrmFit,
    IpcwFit, PointOptions, PvFit, PvQuantity,
};

/// Bumped when the serialized layout changes incompatibly.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionKind {
    Pem,
    Dt,
    Ipcw,
    Crm,
    Pv,
    /// Marginal Kaplan–Meier curve, ignoring features.
    Km,
}

impl ReductionKind {
    pub fn name(self) -> &'static str {
        match self {
            ReductionKind::Pem => "pem",
            ReductionKind::Dt => "dt",
            ReductionKind::Ipcw => "ipcw",
            ReductionKind::Crm => "crm",
            ReductionKind::Pv => "pv",
            ReductionKind::Km => "km",
        }
    }
}

/// Everything needed to fit a model from a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub reduction: ReductionKind,
    pub learner: LearnerSpec,
    /// Defaults: `. + time` (PEM, DT), `.` (IPCW, CRM), `. + tau` (PV).
    pub formula: Option<String>,
    pub cuts: CutStrategy,
    pub censoring_rule: Option<CensoringRule>,
    pub separate_causes: bool,
    /// IPCW horizon; defaults to the median observed time.
    pub tau: Option<f64>,
    pub pv_quantity: PvQuantity,
    /// Pseudo-value horizons; defaults to event-time quantiles at k/8.
    pub pv_taus: Option<Vec<f64>>,
    /// Clip probability-type pseudo-value predictions to [0, 1]; off by
    /// default since pseudo-values legitimately leave that range.
    pub clip: bool,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            reduction: ReductionKind::Pem,
            learner: LearnerSpec::glm(),
            formula: None,
            cuts: CutStrategy::Default,
            censoring_rule: None,
            separate_causes: false,
            tau: None,
            pv_quantity: PvQuantity::Survival,
            pv_taus: None,
            clip: false,
            valid_fraction: 0.2,
            seed: 1,
        }
    }
}

impl ModelSpec {
    pub fn new(reduction: ReductionKind, learner: LearnerSpec) -> Self {
        ModelSpec {
            reduction,
            learner,
            ..Default::default()
        }
    }

    pub fn with_formula(mut self, formula: &str) -> Self {
        self.formula = Some(formula.into());
        self
    }

    fn point_options(&self) -> PointOptions {
        PointOptions {
            formula: self.formula.clone(),
            valid_fraction: self.valid_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reduction", rename_all = "lowercase")]
pub enum FittedModel {
    Pem(FittedReduction),
    Dt(FittedReduction),
    Ipcw(IpcwFit),
    Crm(CrmFit),
    Pv(PvFit),
    Km { curve: StepFunction, schema: FeatureSchema },
}

/// Fits `spec` on `task`.
pub fn fit_model(spec: &ModelSpec, task: &SurvivalTask) -> Result<FittedModel, ReductionError> {
    match spec.reduction {
        ReductionKind::Pem | ReductionKind::Dt => {
            let kind = if spec.reduction == ReductionKind::Pem {
                DistKind::Pem
            } else {
                DistKind::Dt
            };
            let mut options = DistOptions {
                censoring_rule: spec.censoring_rule,
                separate_causes: spec.separate_causes,
                valid_fraction: spec.valid_fraction,
                seed: spec.seed,
                ..Default::default()
            };
            if let Some(f) = &spec.formula {
                options.formula = f.clone();
            }
            let fit = fit_distribution(kind, task, &spec.cuts, &spec.learner, &options)?;
            Ok(match kind {
                DistKind::Pem => FittedModel::Pem(fit),
                DistKind::Dt => FittedModel::Dt(fit),
            })
        }
        ReductionKind::Ipcw => {
            let tau = match spec.tau {
                Some(t) => t,
                None => median_time(task),
            };
            let data = ipcw_transform(task, tau)?;
            Ok(FittedModel::Ipcw(ipcw_fit(&data, &spec.learner, &spec.point_options())?))
        }
        ReductionKind::Crm => {
            let data = crm_targets(task)?;
            Ok(FittedModel::Crm(crm_fit(&data, &spec.learner, &spec.point_options())?))
        }
        ReductionKind::Pv => {
            let taus = spec.pv_taus.clone().unwrap_or_else(|| default_taus(task));
            let data = pseudo_values(task, spec.pv_quantity, &taus)?;
            Ok(FittedModel::Pv(pv_fit(&data, &spec.learner, &spec.point_options(), spec.clip)?))
        }
        ReductionKind::Km => {
            let (t, d) = task.times_status().filter(|_| task.kind == TaskKind::SingleEvent).ok_or_else(|| {
                ReductionError::Unsupported("the Kaplan–Meier baseline needs a single-event task".into())
            })?;
            Ok(FittedModel::Km {
                curve: kaplan_meier(&t, &d)?,
                schema: task.schema.clone(),
            })
        }
    }
}

/// Default IPCW horizon: the type-1 median of observed times.
pub fn median_time(task: &SurvivalTask) -> f64 {
    let mut t: Vec<f64> = task.times_status().map(|(t, _)| t).unwrap_or_default();
    t.sort_by(f64::total_cmp);
    if t.is_empty() {
        return 0.0;
    }
    crate::partition::quantile_type1(&t, 0.5)
}

impl FittedModel {
    pub fn kind(&self) -> ReductionKind {
        match self {
            FittedModel::Pem(_) => ReductionKind::Pem,
            FittedModel::Dt(_) => ReductionKind::Dt,
            FittedModel::Ipcw(_) => ReductionKind::Ipcw,
            FittedModel::Crm(_) => ReductionKind::Crm,
            FittedModel::Pv(_) => ReductionKind::Pv,
            FittedModel::Km { .. } => ReductionKind::Km,
        }
    }

    /// Feature schema the model was trained on.
    pub fn schema(&self) -> &FeatureSchema {
        match self {
            FittedModel::Pem(f) | FittedModel::Dt(f) => &f.schema,
            FittedModel::Ipcw(f) => &f.encoder.schema,
            FittedModel::Crm(f) => &f.encoder.schema,
            FittedModel::Pv(f) => &f.encoder.schema,
            FittedModel::Km { schema, .. } => schema,
        }
    }

    /// Aligns a task's subject features to the training schema.
    pub fn align(&self, task: &SurvivalTask) -> Result<(FeatureRows, usize), ReductionError> {
        crate::reduce_dist::align_subjects(self.schema(), task)
    }

    /// Predicted survival curve for one subject. Survival pseudo-value fits
    /// give a step curve through their (monotonized) horizon predictions;
    /// IPCW and CRM fits have no curve.
    pub fn survival_curve(&self, x: &[f64]) -> Result<SurvivalCurve, ReductionError> {
        match self {
            FittedModel::Pem(f) | FittedModel::Dt(f) => f.survival(x),
            FittedModel::Km { curve, .. } => Ok(SurvivalCurve::Step(curve.clone())),
            FittedModel::Pv(f) if f.quantity == PvQuantity::Survival => {
                let mut prev = 1.0f64;
                let values = f
                    .taus
                    .iter()
                    .map(|&t| {
                        prev = prev.min(f.predict(x, t).0.clamp(0.0, 1.0));
                        prev
                    })
                    .collect();
                Ok(SurvivalCurve::Step(StepFunction::new(f.taus.clone(), values, 1.0)))
            }
            other => Err(ReductionError::Unsupported(format!(
                "{} models do not predict survival curves",
                other.kind().name()
            ))),
        }
    }

    /// Scalar risk, higher meaning earlier failure: negative RMST at
    /// `tau_max` for curve-valued models, the event probability for IPCW,
    /// the ranking score for CRM.
    pub fn risk(&self, x: &[f64], tau_max: f64) -> Result<f64, ReductionError> {
        match self {
            FittedModel::Ipcw(f) => Ok(f.predict_risk(x).0),
            FittedModel::Crm(f) => Ok(f.predict(x)),
            FittedModel::Pv(f) => match f.quantity {
                PvQuantity::Rmst => Ok(-f.predict(x, tau_max).0),
                PvQuantity::Survival => Ok(-self.survival_curve(x)?.rmst(tau_max)),
                PvQuantity::Cif { .. } => Ok(f.predict(x, tau_max).0),
                PvQuantity::Transition { from, to } => {
                    let p = f.predict(x, tau_max).0;
                    Ok(if from == to { -p } else { p })
                }
            },
            _ => Ok(-self.survival_curve(x)?.rmst(tau_max)),
        }
    }

    pub fn to_json(&self) -> Result<String, ReductionError> {
        Ok(serde_json::to_string(&Envelope {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self, ReductionError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(ReductionError::Invalid(format!(
                "model file has format version {}, expected {}",
                header.format_version, MODEL_FORMAT_VERSION
            )));
        }
        let env: Envelope = serde_json::from_str(text)?;
        Ok(env.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReductionError> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            w,
            &Envelope {
                format_version: MODEL_FORMAT_VERSION,
                model: self.clone(),
            },
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReductionError> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model: FittedModel,
}

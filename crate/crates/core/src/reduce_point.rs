//! Point-estimate reductions: IPCW-weighted classification at a horizon,
//! pairwise ranking targets, and jackknife pseudo-values.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{feature_fields, format_number, FeatureRows, FeatureSchema, SurvivalTask, TaskKind};
use crate::error::ReductionError;
use crate::estimators::{aalen_johansen, censoring_km, kaplan_meier, StepFunction};
use crate::learners::{
    fit_learner, DesignContext, Encoder, GbtData, LearnerFit, LearnerSpec, Objective, RowInput,
};
use crate::partition::quantile_type1;
use crate::reduce_dist::{align_subjects, holdout_ids};

fn single_event(task: &SurvivalTask, what: &str) -> Result<(Vec<f64>, Vec<u8>), ReductionError> {
    if task.kind != TaskKind::SingleEvent {
        return Err(ReductionError::Unsupported(format!(
            "{} needs a single-event task, got {}",
            what, task.kind
        )));
    }
    Ok(task.times_status().expect("single-event tasks hold subject records"))
}

/// Rows of a point reduction ready for a learner.
struct PointRows {
    ids: Vec<String>,
    inputs: Vec<(Vec<f64>, f64)>,
    y: Vec<f64>,
    weights: Option<Vec<f64>>,
}

/// Fits a learner to one row per (subject[, horizon]), holding out subjects
/// when the learner uses early stopping.
fn fit_rows(
    rows: &PointRows,
    encoder: &Encoder,
    learner: &LearnerSpec,
    objective: Objective,
    valid_fraction: f64,
    seed: u64,
) -> Result<LearnerFit, ReductionError> {
    let holdout: Option<HashSet<String>> = learner.wants_holdout().then(|| {
        let mut unique: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for id in &rows.ids {
            if seen.insert(id.clone()) {
                unique.push(id.clone());
            }
        }
        holdout_ids(&unique, valid_fraction, seed)
    });
    let (train_idx, valid_idx): (Vec<usize>, Vec<usize>) = (0..rows.ids.len())
        .partition(|&i| holdout.as_ref().is_none_or(|h| !h.contains(&rows.ids[i])));
    let build = |idx: &[usize]| {
        let (x, _) = encoder.encode(idx.iter().map(|&i| RowInput {
            tau: rows.inputs[i].1,
            ..RowInput::new(&rows.inputs[i].0)
        }));
        let y: Vec<f64> = idx.iter().map(|&i| rows.y[i]).collect();
        let w: Option<Vec<f64>> = rows.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect());
        (x, y, w)
    };
    let (tx, ty, tw) = build(&train_idx);
    let train = GbtData {
        x: &tx,
        y: &ty,
        offset: None,
        weights: tw.as_deref(),
    };
    let fit = if holdout.is_some() {
        let (vx, vy, vw) = build(&valid_idx);
        let valid = GbtData {
            x: &vx,
            y: &vy,
            offset: None,
            weights: vw.as_deref(),
        };
        fit_learner(learner, objective, &train, Some(&valid))?
    } else {
        fit_learner(learner, objective, &train, None)?
    };
    Ok(fit)
}

fn predict_one(encoder: &Encoder, fit: &LearnerFit, x: &[f64], tau: f64) -> f64 {
    let (design, _) = encoder.encode([RowInput {
        tau,
        ..RowInput::new(x)
    }]);
    fit.predict_response(&design)[0]
}

/// Options shared by the point reductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointOptions {
    /// Defaults to `.` for IPCW and CRM and `. + tau` for pseudo-values.
    pub formula: Option<String>,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for PointOptions {
    fn default() -> Self {
        PointOptions {
            formula: None,
            valid_fraction: 0.2,
            seed: 1,
        }
    }
}

// ---------------------------------------------------------------- IPCW

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcwDataset {
    pub tau: f64,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
    pub censoring: StepFunction,
    pub features: Vec<Vec<f64>>,
    pub schema: FeatureSchema,
}

/// Labels `e_i = 1(t_i <= tau, d_i = 1)` with inverse-probability-of-censoring
/// weights. Subjects censored at or before `tau` get weight 0; events use
/// the left limit of the censoring survival at their time, survivors its
/// value at `tau`.
pub fn ipcw_transform(task: &SurvivalTask, tau: f64) -> Result<IpcwDataset, ReductionError> {
    ipcw_transform_with(task, tau, None)
}

/// As [`ipcw_transform`], but with a censoring survival estimated elsewhere
/// (typically on training data) instead of on `task`.
pub fn ipcw_transform_with(
    task: &SurvivalTask,
    tau: f64,
    censoring: Option<&StepFunction>,
) -> Result<IpcwDataset, ReductionError> {
    let (times, status) = single_event(task, "IPCW")?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ReductionError::Invalid(format!("horizon must be positive, got {}", tau)));
    }
    if task.has_left_truncation() {
        return Err(ReductionError::Unsupported("IPCW is not defined for left-truncated data".into()));
    }
    let g = match censoring {
        Some(g) => g.clone(),
        None => censoring_km(&times, &status)?,
    };
    let records = task.subjects().unwrap();
    let mut labels = Vec::with_capacity(times.len());
    let mut weights = Vec::with_capacity(times.len());
    for (i, r) in records.iter().enumerate() {
        let (label, at) = if times[i] <= tau && status[i] == 1 {
            (1, Some(g.left_limit(times[i])))
        } else if times[i] > tau {
            (0, Some(g.eval(tau)))
        } else {
            (0, None)
        };
        let w = match at {
            Some(gv) if gv > 0.0 => 1.0 / gv,
            Some(_) => {
                return Err(ReductionError::ZeroCensoringSurvival {
                    id: r.id.clone(),
                    time: times[i].min(tau),
                })
            }
            None => 0.0,
        };
        labels.push(label);
        weights.push(w);
    }
    Ok(IpcwDataset {
        tau,
        ids: records.iter().map(|r| r.id.clone()).collect(),
        labels,
        weights,
        censoring: g,
        features: records.iter().map(|r| r.features.clone()).collect(),
        schema: task.schema.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcwFit {
    pub tau: f64,
    pub encoder: Encoder,
    pub fit: LearnerFit,
    pub censoring: StepFunction,
}

/// Weighted classification of the horizon labels.
pub fn ipcw_fit(
    data: &IpcwDataset,
    learner: &LearnerSpec,
    options: &PointOptions,
) -> Result<IpcwFit, ReductionError> {
    let formula = options.formula.clone().unwrap_or_else(|| ".".into());
    let encoder = Encoder::new(&formula, &data.schema, DesignContext::plain())?;
    let rows = PointRows {
        ids: data.ids.clone(),
        inputs: data.features.iter().map(|x| (x.clone(), 0.0)).collect(),
        y: data.labels.iter().map(|&e| e as f64).collect(),
        weights: Some(data.weights.clone()),
    };
    let fit = fit_rows(&rows, &encoder, learner, Objective::Logistic, options.valid_fraction, options.seed)?;
    Ok(IpcwFit {
        tau: data.tau,
        encoder,
        fit,
        censoring: data.censoring.clone(),
    })
}

impl IpcwFit {
    /// `(pi, 1 - pi)`: event probability by the horizon and survival beyond it.
    pub fn predict_risk(&self, x: &[f64]) -> (f64, f64) {
        let p = predict_one(&self.encoder, &self.fit, x, 0.0).clamp(0.0, 1.0);
        (p, 1.0 - p)
    }
}

pub fn write_ipcw_csv<W: Write>(data: &IpcwDataset, writer: W) -> Result<(), ReductionError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".into(), "weight".into()];
    header.extend(data.schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..data.ids.len() {
        let mut row = vec![
            data.ids[i].clone(),
            data.labels[i].to_string(),
            format_number(data.weights[i]),
        ];
        row.extend(feature_fields(&data.schema, &data.features[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- CRM

/// Probability that subject `i` fails before subject `j`, given the observed
/// data and the marginal Kaplan–Meier curve. The flag is set when a zero
/// survival denominator forced the limiting value.
pub fn crm_pairwise(
    i: usize,
    j: usize,
    times: &[f64],
    status: &[u8],
    km: &StepFunction,
) -> (f64, bool) {
    assert_ne!(i, j, "a subject is not compared with itself");
    let (ti, tj) = (times[i], times[j]);
    match (status[i], status[j]) {
        (1, 1) => (
            if ti < tj {
                1.0
            } else if ti > tj {
                0.0
            } else {
                0.5
            },
            false,
        ),
        (1, _) => {
            if ti <= tj {
                (1.0, false)
            } else {
                // j survived past tj; i fails first iff j survives past ti
                let den = km.eval(tj);
                if den > 0.0 {
                    (km.eval(ti) / den, false)
                } else {
                    (0.0, true)
                }
            }
        }
        (_, 1) => {
            let (p, flag) = crm_pairwise(j, i, times, status, km);
            (1.0 - p, flag)
        }
        _ => {
            if ti <= tj {
                let den = km.eval(ti);
                if den > 0.0 {
                    (1.0 - km.eval(tj) / (2.0 * den), false)
                } else {
                    (0.5, true)
                }
            } else {
                let (p, flag) = crm_pairwise(j, i, times, status, km);
                (1.0 - p, flag)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmDataset {
    pub ids: Vec<String>,
    pub targets: Vec<f64>,
    pub km: StepFunction,
    pub features: Vec<Vec<f64>>,
    pub schema: FeatureSchema,
    /// Pairs resolved by a limiting convention.
    pub degenerate_pairs: usize,
}

/// `r_i`: mean over `j != i` of the probability that `i` fails first.
pub fn crm_targets(task: &SurvivalTask) -> Result<CrmDataset, ReductionError> {
    let (times, status) = single_event(task, "CRM")?;
    let n = times.len();
    if n < 2 {
        return Err(ReductionError::TooFewSubjects(n));
    }
    let km = kaplan_meier(&times, &status)?;
    let per_subject: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sum = 0.0;
            let mut flags = 0;
            for j in (0..n).filter(|&j| j != i) {
                let (p, f) = crm_pairwise(i, j, &times, &status, &km);
                sum += p;
                flags += usize::from(f);
            }
            (sum / (n - 1) as f64, flags)
        })
        .collect();
    let records = task.subjects().unwrap();
    Ok(CrmDataset {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        targets: per_subject.iter().map(|x| x.0).collect(),
        km,
        features: records.iter().map(|r| r.features.clone()).collect(),
        schema: task.schema.clone(),
        degenerate_pairs: per_subject.iter().map(|x| x.1).sum::<usize>() / 2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmFit {
    pub encoder: Encoder,
    pub fit: LearnerFit,
}

/// Regression of the ranking targets on the features.
pub fn crm_fit(data: &CrmDataset, learner: &LearnerSpec, options: &PointOptions) -> Result<CrmFit, ReductionError> {
    let formula = options.formula.clone().unwrap_or_else(|| ".".into());
    let encoder = Encoder::new(&formula, &data.schema, DesignContext::plain())?;
    let rows = PointRows {
        ids: data.ids.clone(),
        inputs: data.features.iter().map(|x| (x.clone(), 0.0)).collect(),
        y: data.targets.clone(),
        weights: None,
    };
    let fit = fit_rows(&rows, &encoder, learner, Objective::Regression, options.valid_fraction, options.seed)?;
    Ok(CrmFit { encoder, fit })
}

impl CrmFit {
    /// Predicted ranking score; higher means earlier failure.
    pub fn predict(&self, x: &[f64]) -> f64 {
        predict_one(&self.encoder, &self.fit, x, 0.0)
    }
}

pub fn write_crm_csv<W: Write>(data: &CrmDataset, writer: W) -> Result<(), ReductionError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "target".into()];
    header.extend(data.schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..data.ids.len() {
        let mut row = vec![data.ids[i].clone(), format_number(data.targets[i])];
        row.extend(feature_fields(&data.schema, &data.features[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- pseudo-values

/// Quantity a pseudo-value set is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PvQuantity {
    /// Kaplan–Meier survival.
    Survival,
    /// Area under the Kaplan–Meier curve.
    Rmst,
    /// Aalen–Johansen cumulative incidence of cause `k` (1-based).
    Cif { cause: usize },
    /// Aalen–Johansen transition probability `P_{from,to}(0, tau)`; for
    /// single-event tasks state 0 is event-free and state 1 the event.
    Transition { from: usize, to: usize },
}

impl PvQuantity {
    pub fn is_probability(self) -> bool {
        !matches!(self, PvQuantity::Rmst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoValueSet {
    pub quantity: PvQuantity,
    pub taus: Vec<f64>,
    pub ids: Vec<String>,
    /// `values[i][k]` for subject `i` and horizon `taus[k]`.
    pub values: Vec<Vec<f64>>,
    /// Full-sample estimate at each horizon.
    pub full: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub schema: FeatureSchema,
    /// Set when a horizon lies beyond the estimator's last knot.
    pub extrapolated: bool,
}

/// Default horizons: type-1 quantiles of the event times at `k/8`,
/// `k = 1..=7`, without duplicates.
pub fn default_taus(task: &SurvivalTask) -> Vec<f64> {
    let mut events = task.event_times();
    events.sort_by(f64::total_cmp);
    if events.is_empty() {
        return vec![];
    }
    let mut taus: Vec<f64> = (1..=7).map(|k| quantile_type1(&events, k as f64 / 8.0)).collect();
    taus.dedup();
    taus
}

/// The estimate at each horizon and the last time the estimator changes.
fn estimate(task: &SurvivalTask, quantity: PvQuantity, taus: &[f64]) -> Result<(Vec<f64>, f64), ReductionError> {
    match quantity {
        PvQuantity::Survival | PvQuantity::Rmst => {
            let (t, d) = task.times_status().ok_or_else(|| {
                ReductionError::Unsupported("survival pseudo-values need subject records".into())
            })?;
            let km = kaplan_meier(&t, &d)?;
            let last = km.knots.last().copied().unwrap_or(0.0);
            let v = match quantity {
                PvQuantity::Survival => taus.iter().map(|&u| km.eval(u)).collect(),
                _ => taus.iter().map(|&u| km.integral(u)).collect(),
            };
            Ok((v, last))
        }
        PvQuantity::Cif { cause } => {
            let path = aalen_johansen(task)?;
            if cause == 0 || cause >= path.states.len() {
                return Err(ReductionError::Invalid(format!("cause {} does not exist", cause)));
            }
            let f = path.probability(0, cause);
            Ok((taus.iter().map(|&u| f.eval(u)).collect(), path.knots.last().copied().unwrap_or(0.0)))
        }
        PvQuantity::Transition { from, to } => {
            let path = aalen_johansen(task)?;
            let s = path.states.len();
            if from >= s || to >= s {
                return Err(ReductionError::Invalid(format!("state index out of range ({} states)", s)));
            }
            let f = path.probability(from, to);
            Ok((taus.iter().map(|&u| f.eval(u)).collect(), path.knots.last().copied().unwrap_or(0.0)))
        }
    }
}

/// Jackknife pseudo-values `n theta - (n - 1) theta^(-i)` at each horizon,
/// recomputing the estimator without each subject.
pub fn pseudo_values(
    task: &SurvivalTask,
    quantity: PvQuantity,
    taus: &[f64],
) -> Result<PseudoValueSet, ReductionError> {
    if task.has_left_truncation() {
        return Err(ReductionError::LeftTruncated);
    }
    if let PvQuantity::Cif { .. } = quantity {
        if task.kind != TaskKind::CompetingRisks {
            return Err(ReductionError::Unsupported("CIF pseudo-values need a competing-risks task".into()));
        }
    }
    let subjects = task.subject_features();
    let n = subjects.len();
    if n < 2 {
        return Err(ReductionError::TooFewSubjects(n));
    }
    if taus.is_empty() || taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(ReductionError::Invalid("horizons must be positive".into()));
    }
    let (full, last) = estimate(task, quantity, taus)?;
    let nf = n as f64;
    let values: Vec<Vec<f64>> = subjects
        .par_iter()
        .map(|(id, _)| -> Result<Vec<f64>, ReductionError> {
            let keep: HashSet<String> = subjects
                .iter()
                .filter(|(other, _)| other != id)
                .map(|(other, _)| other.clone())
                .collect();
            let reduced = task.subset(&keep);
            let has_event = !reduced.event_times().is_empty();
            let loo = if has_event {
                estimate(&reduced, quantity, taus)?.0
            } else {
                // no events left: survival is flat at 1, incidences at 0
                taus.iter()
                    .map(|&u| match quantity {
                        PvQuantity::Survival => 1.0,
                        PvQuantity::Rmst => u,
                        PvQuantity::Cif { .. } => 0.0,
                        PvQuantity::Transition { from, to } => f64::from(u8::from(from == to)),
                    })
                    .collect()
            };
            Ok(full.iter().zip(&loo).map(|(f, l)| nf * f - (nf - 1.0) * l).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(PseudoValueSet {
        quantity,
        taus: taus.to_vec(),
        ids: subjects.iter().map(|s| s.0.clone()).collect(),
        values,
        full,
        features: subjects.into_iter().map(|s| s.1).collect(),
        schema: task.schema.clone(),
        extrapolated: taus.iter().any(|&t| t > last),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvFit {
    pub quantity: PvQuantity,
    pub taus: Vec<f64>,
    pub encoder: Encoder,
    pub fit: LearnerFit,
    /// Clip probability-type predictions to `[0, 1]`.
    pub clip: bool,
}

/// Regression of the pseudo-values on the features, with the horizon as an
/// extra feature (one row per subject and horizon).
pub fn pv_fit(
    data: &PseudoValueSet,
    learner: &LearnerSpec,
    options: &PointOptions,
    clip: bool,
) -> Result<PvFit, ReductionError> {
    let formula = options.formula.clone().unwrap_or_else(|| {
        if data.taus.len() > 1 {
            ". + tau".into()
        } else {
            ".".into()
        }
    });
    let context = DesignContext {
        has_tau: true,
        ..DesignContext::plain()
    };
    let encoder = Encoder::new(&formula, &data.schema, context)?;
    let mut rows = PointRows {
        ids: vec![],
        inputs: vec![],
        y: vec![],
        weights: None,
    };
    for (i, id) in data.ids.iter().enumerate() {
        for (k, &tau) in data.taus.iter().enumerate() {
            rows.ids.push(id.clone());
            rows.inputs.push((data.features[i].clone(), tau));
            rows.y.push(data.values[i][k]);
        }
    }
    let fit = fit_rows(&rows, &encoder, learner, Objective::Regression, options.valid_fraction, options.seed)?;
    Ok(PvFit {
        quantity: data.quantity,
        taus: data.taus.clone(),
        encoder,
        fit,
        clip,
    })
}

impl PvFit {
    /// Predicted quantity at horizon `tau`; the flag is set when clipping
    /// changed the value.
    pub fn predict(&self, x: &[f64], tau: f64) -> (f64, bool) {
        let v = predict_one(&self.encoder, &self.fit, x, tau);
        if self.clip && self.quantity.is_probability() {
            let c = v.clamp(0.0, 1.0);
            (c, c != v)
        } else {
            (v, false)
        }
    }
}

pub fn write_pv_csv<W: Write>(data: &PseudoValueSet, writer: W) -> Result<(), ReductionError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "tau".into(), "pseudo_value".into()];
    header.extend(data.schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for i in 0..data.ids.len() {
        let fields = feature_fields(&data.schema, &data.features[i]);
        for (k, &tau) in data.taus.iter().enumerate() {
            let mut row = vec![data.ids[i].clone(), format_number(tau), format_number(data.values[i][k])];
            row.extend(fields.iter().cloned());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Aligns a task's subject features to a training schema.
pub fn aligned_subjects(
    schema: &FeatureSchema,
    task: &SurvivalTask,
) -> Result<(FeatureRows, usize), ReductionError> {
    align_subjects(schema, task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn worked() -> SurvivalTask {
        SurvivalTask::from_times(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap()
    }

    #[test]
    fn ipcw_without_censoring() {
        let task = SurvivalTask::from_times(&[1.0, 3.0], &[1, 1]).unwrap();
        let d = ipcw_transform(&task, 2.0).unwrap();
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn ipcw_worked_example() {
        let d = ipcw_transform(&worked(), 2.5).unwrap();
        assert_eq!(d.labels, vec![1, 0, 0]);
        assert_eq!(d.weights, vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn ipcw_censored_at_horizon_gets_zero_weight() {
        let task = SurvivalTask::from_times(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        let d = ipcw_transform(&task, 2.0).unwrap();
        assert_eq!(d.weights[1], 0.0);
        let task = SurvivalTask::from_times(&[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap();
        assert_eq!(ipcw_transform(&task, 2.0).unwrap().labels, vec![1, 1, 0]);
    }

    #[test]
    fn ipcw_weights_stay_finite_when_last_subject_is_censored() {
        let task = SurvivalTask::from_times(&[1.0, 2.0, 3.0], &[1, 1, 0]).unwrap();
        let d = ipcw_transform(&task, 5.0).unwrap();
        assert_eq!(d.weights, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn ipcw_intercept_only_is_weighted_mean() {
        let task = SurvivalTask::from_times(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1, 0, 1, 1, 0]).unwrap();
        let d = ipcw_transform(&task, 3.5).unwrap();
        let fit = ipcw_fit(&d, &LearnerSpec::glm(), &PointOptions::default()).unwrap();
        let num: f64 = d.labels.iter().zip(&d.weights).map(|(&e, w)| e as f64 * w).sum();
        let den: f64 = d.weights.iter().sum();
        let (pi, s) = fit.predict_risk(&[]);
        assert_abs_diff_eq!(pi, num / den, epsilon = 1e-10);
        assert_abs_diff_eq!(s, 1.0 - pi, epsilon = 1e-15);
    }

    #[test]
    fn crm_cases() {
        let (t, d) = (vec![1.0, 2.0, 3.0], vec![1u8, 0, 1]);
        let km = kaplan_meier(&t, &d).unwrap();
        let both = |ti: f64, di: u8, tj: f64, dj: u8| crm_pairwise(0, 1, &[ti, tj], &[di, dj], &km).0;
        assert_eq!(both(1.0, 1, 2.0, 1), 1.0);
        assert_eq!(both(2.0, 0, 2.0, 0), 0.5);
        assert_eq!(both(2.0, 1, 1.0, 0), 1.0);
    }

    #[test]
    fn crm_uncensored_ranks() {
        let r = crm_targets(&SurvivalTask::from_times(&[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap()).unwrap();
        assert_eq!(r.targets, vec![1.0, 0.5, 0.0]);
        let r = crm_targets(&SurvivalTask::from_times(&[1.0, 2.0], &[1, 1]).unwrap()).unwrap();
        assert_eq!(r.targets, vec![1.0, 0.0]);
    }

    #[test]
    fn crm_all_censored_same_time_is_half() {
        let task = SurvivalTask::with_features(&[2.0, 2.0, 2.0, 1.0], &[0, 0, 0, 1], &["x"], &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let (t, d) = task.times_status().unwrap();
        let km = kaplan_meier(&t, &d).unwrap();
        assert_eq!(crm_pairwise(0, 1, &t, &d, &km).0, 0.5);
        assert_eq!(crm_pairwise(1, 2, &t, &d, &km).0, 0.5);
    }

    #[test]
    fn pv_uncensored_closed_forms() {
        let times = [0.5, 1.2, 2.0, 2.5, 3.3];
        let task = SurvivalTask::from_times(&times, &[1; 5]).unwrap();
        let taus = [1.0, 2.2];
        let s = pseudo_values(&task, PvQuantity::Survival, &taus).unwrap();
        let r = pseudo_values(&task, PvQuantity::Rmst, &taus).unwrap();
        for (i, &t) in times.iter().enumerate() {
            for (k, &tau) in taus.iter().enumerate() {
                assert_abs_diff_eq!(s.values[i][k], f64::from(u8::from(t > tau)), epsilon = 1e-10);
                assert_abs_diff_eq!(r.values[i][k], t.min(tau), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pv_rejects_degenerate_inputs() {
        let one = SurvivalTask::from_times(&[1.0], &[1]).unwrap();
        assert!(matches!(
            pseudo_values(&one, PvQuantity::Survival, &[0.5]),
            Err(ReductionError::TooFewSubjects(1))
        ));
        let mut trunc = SurvivalTask::from_times(&[1.0, 2.0], &[1, 1]).unwrap();
        if let crate::data::Records::Subjects(r) = &mut trunc.records {
            r[0].entry = 0.5;
        }
        assert!(matches!(
            pseudo_values(&trunc, PvQuantity::Survival, &[0.5]),
            Err(ReductionError::LeftTruncated)
        ));
    }

    #[test]
    fn pv_intercept_only_prediction_is_mean() {
        let task = SurvivalTask::from_times(&[1.0, 2.0, 2.5, 3.0, 4.0, 5.0], &[1, 0, 1, 1, 0, 1]).unwrap();
        let pv = pseudo_values(&task, PvQuantity::Survival, &[2.2]).unwrap();
        let fit = pv_fit(&pv, &LearnerSpec::glm(), &PointOptions::default(), false).unwrap();
        let mean: f64 = pv.values.iter().map(|v| v[0]).sum::<f64>() / 6.0;
        assert_abs_diff_eq!(fit.predict(&[], 2.2).0, mean, epsilon = 1e-10);
    }

    #[test]
    fn pv_stacked_horizons_differ() {
        let task = SurvivalTask::from_times(&[1.0, 2.0, 2.5, 3.0, 4.0, 5.0], &[1, 0, 1, 1, 0, 1]).unwrap();
        let pv = pseudo_values(&task, PvQuantity::Survival, &[1.5, 3.5]).unwrap();
        let fit = pv_fit(&pv, &LearnerSpec::glm(), &PointOptions::default(), false).unwrap();
        assert!(fit.predict(&[], 1.5).0 > fit.predict(&[], 3.5).0);
    }

    #[test]
    fn default_grid_has_seven_points() {
        let times: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let task = SurvivalTask::from_times(&times, &[1; 40]).unwrap();
        assert_eq!(default_taus(&task), vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0]);
    }

    #[test]
    fn csv_layouts() {
        let task = SurvivalTask::with_features(&[1.0, 2.0, 3.0], &[1, 0, 1], &["age"], &[vec![31.0], vec![67.0], vec![42.0]]).unwrap();
        let mut buf = Vec::new();
        write_ipcw_csv(&ipcw_transform(&task, 2.5).unwrap(), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("id,label,weight,age\n1,1,1,31\n2,0,0,67\n3,0,2,42"));
        let mut buf = Vec::new();
        write_crm_csv(&crm_targets(&task).unwrap(), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("id,target,age\n"));
        let mut buf = Vec::new();
        write_pv_csv(&pseudo_values(&task, PvQuantity::Survival, &[1.5, 2.5]).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,tau,pseudo_value,age\n"));
        assert_eq!(text.lines().count(), 7);
    }
}

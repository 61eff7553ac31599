//! Piecewise-exponential (Poisson) and discrete-time (binary) reductions and
//! the maps from fitted hazards back to survival curves, cumulative
//! incidences and transition matrices.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{format_number, FeatureRows, FeatureSchema, StateGraph, SurvivalTask, TaskKind};
use crate::error::ReductionError;
use crate::estimators::{identity, matmul, Matrix, StepFunction};
use crate::learners::{
    fit_learner, DesignContext, DesignMatrix, Encoder, GbtData, LearnerFit, LearnerSpec,
    Objective, RowInput,
};
use crate::partition::{expand, make_cuts, CensoringRule, CutGrid, CutStrategy, LongData};

/// Cap on a discrete-time all-cause hazard.
const MAX_DISCRETE_HAZARD: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistKind {
    Pem,
    Dt,
}

impl DistKind {
    pub fn name(self) -> &'static str {
        match self {
            DistKind::Pem => "pem",
            DistKind::Dt => "dt",
        }
    }
}

/// Options shared by both distribution reductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistOptions {
    pub formula: String,
    /// Overrides the default censoring rule (keep for PEM, drop for DT).
    pub censoring_rule: Option<CensoringRule>,
    /// Fit one model per cause instead of a stacked model.
    pub separate_causes: bool,
    /// Share of subjects held out for early stopping.
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for DistOptions {
    fn default() -> Self {
        DistOptions {
            formula: ". + time".into(),
            censoring_rule: None,
            separate_causes: false,
            valid_fraction: 0.2,
            seed: 1,
        }
    }
}

impl DistOptions {
    pub fn with_formula(formula: &str) -> Self {
        DistOptions {
            formula: formula.into(),
            ..Default::default()
        }
    }
}

/// A trained PEM or DT reduction with everything needed to transform new
/// inputs the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedReduction {
    pub kind: DistKind,
    pub task_kind: TaskKind,
    pub grid: CutGrid,
    pub censoring_rule: CensoringRule,
    pub encoder: Encoder,
    /// One fit, or one per cause when causes are fitted separately.
    pub fits: Vec<LearnerFit>,
    pub cause_count: usize,
    pub cause_labels: Vec<String>,
    pub state_graph: Option<StateGraph>,
    pub schema: FeatureSchema,
}

/// Predicted survival curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurvivalCurve {
    Step(StepFunction),
    /// Piecewise-constant hazard: exponential decay within each interval,
    /// last hazard continued beyond the last cut.
    PiecewiseExp { cuts: Vec<f64>, hazards: Vec<f64> },
}

impl SurvivalCurve {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SurvivalCurve::Step(s) => s.eval(t),
            SurvivalCurve::PiecewiseExp { cuts, hazards } => (-cumulative_hazard(cuts, hazards, t)).exp(),
        }
    }

    /// Times where the curve changes form: the step knots or the cuts.
    pub fn knots(&self) -> &[f64] {
        match self {
            SurvivalCurve::Step(s) => &s.knots,
            SurvivalCurve::PiecewiseExp { cuts, .. } => cuts,
        }
    }

    /// `int_0^tau S(u) du`, exactly.
    pub fn rmst(&self, tau: f64) -> f64 {
        match self {
            SurvivalCurve::Step(s) => s.integral(tau),
            SurvivalCurve::PiecewiseExp { cuts, hazards } => {
                let mut acc = 0.0;
                let mut h0 = 0.0;
                let mut lo = 0.0;
                for (j, &hi) in cuts.iter().enumerate() {
                    if lo >= tau {
                        break;
                    }
                    let last = j + 1 == cuts.len();
                    let end = if last { tau } else { hi.min(tau) };
                    acc += segment_integral(h0, hazards[j], end - lo);
                    h0 += hazards[j] * (hi - lo);
                    lo = hi;
                }
                acc
            }
        }
    }
}

/// `int_0^len exp(-h0 - h u) du`.
fn segment_integral(h0: f64, h: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let x = h * len;
    let factor = if x.abs() < 1e-8 {
        len * (1.0 - x / 2.0)
    } else {
        -(-x).exp_m1() / h
    };
    (-h0).exp() * factor
}

fn cumulative_hazard(cuts: &[f64], hazards: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    let mut lo = 0.0;
    for (j, &hi) in cuts.iter().enumerate() {
        let last = j + 1 == cuts.len();
        if t <= hi || last {
            return acc + hazards[j] * (t - lo).max(0.0);
        }
        acc += hazards[j] * (hi - lo);
        lo = hi;
    }
    acc
}

/// `exp(dt Q)` for a generator `Q` (rows summing to zero) by scaling and
/// squaring: halve `dt` until `dt Q` is small, sum the Taylor series, then
/// square back.
pub fn expm_generator(q: &Matrix, dt: f64) -> Matrix {
    let n = q.len();
    let norm = q
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * dt;
    let mut squarings = 0u32;
    let mut scale = dt;
    let mut r = norm;
    while r > 0.25 && squarings < 64 {
        scale /= 2.0;
        r /= 2.0;
        squarings += 1;
    }
    let a: Matrix = q.iter().map(|row| row.iter().map(|v| v * scale).collect()).collect();
    let mut out = identity(n);
    let mut term = identity(n);
    for k in 1..=20 {
        term = matmul(&term, &a);
        let mut largest = 0.0f64;
        for (o, t) in out.iter_mut().zip(&term) {
            for (x, v) in o.iter_mut().zip(t) {
                let inc = v / factorial(k);
                *x += inc;
                largest = largest.max(inc.abs());
            }
        }
        if largest < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        out = matmul(&out, &out);
    }
    for row in out.iter_mut() {
        row.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Restricted mean survival time of a curve up to `tau`.
pub fn rmst(curve: &SurvivalCurve, tau: f64) -> f64 {
    curve.rmst(tau)
}

fn design_context(grid: &CutGrid, task: &SurvivalTask) -> DesignContext {
    let transitions = task
        .state_graph
        .as_ref()
        .map(|g| (0..g.edges.len()).map(|e| g.edge_label(e)).collect())
        .unwrap_or_default();
    let n_episodes = task
        .start_stop()
        .map(|r| r.iter().map(|x| x.episode).max().unwrap_or(1))
        .unwrap_or(1);
    DesignContext {
        n_intervals: Some(grid.len()),
        n_causes: task.cause_count(),
        cause_labels: task.cause_labels.clone(),
        transitions,
        n_episodes,
        has_tau: false,
    }
}

fn long_inputs<'a>(long: &'a LongData, idx: &[usize]) -> Vec<RowInput<'a>> {
    idx.iter()
        .map(|&i| {
            let r = &long.rows[i];
            RowInput {
                features: &r.features,
                j: r.j,
                a_end: r.a_end,
                cause: r.cause.unwrap_or(1),
                edge: r.transition.as_ref().map_or(0, |t| t.edge),
                episode: r.transition.as_ref().map_or(1, |t| t.episode),
                tau: 0.0,
            }
        })
        .collect()
}

/// Subjects held out for early stopping: a seeded shuffle, at least one
/// subject on each side.
pub(crate) fn holdout_ids(ids: &[String], fraction: f64, seed: u64) -> HashSet<String> {
    let mut ids = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    ids.into_iter().take(k).collect()
}

struct RowSet {
    x: DesignMatrix,
    y: Vec<f64>,
    offset: Option<Vec<f64>>,
}

impl RowSet {
    fn view(&self) -> GbtData<'_> {
        GbtData {
            x: &self.x,
            y: &self.y,
            offset: self.offset.as_deref(),
            weights: None,
        }
    }
}

fn row_set(long: &LongData, encoder: &Encoder, idx: &[usize], kind: DistKind) -> RowSet {
    let (x, _) = encoder.encode(long_inputs(long, idx));
    RowSet {
        x,
        y: idx.iter().map(|&i| long.rows[i].d as f64).collect(),
        offset: (kind == DistKind::Pem).then(|| idx.iter().map(|&i| long.rows[i].offset).collect()),
    }
}

fn fit_dist(
    kind: DistKind,
    task: &SurvivalTask,
    grid: &CutGrid,
    learner: &LearnerSpec,
    options: &DistOptions,
) -> Result<FittedReduction, ReductionError> {
    let rule = options.censoring_rule.unwrap_or(match kind {
        DistKind::Pem => CensoringRule::KeepPartial,
        DistKind::Dt => CensoringRule::DropPartial,
    });
    let long = expand(task, grid, rule)?;
    let encoder = Encoder::new(&options.formula, &task.schema, design_context(grid, task))?;
    let objective = match kind {
        DistKind::Pem => Objective::Poisson,
        DistKind::Dt => Objective::Logistic,
    };
    let holdout = learner
        .wants_holdout()
        .then(|| holdout_ids(&task.subject_ids(), options.valid_fraction, options.seed));

    let separate = options.separate_causes && task.kind == TaskKind::CompetingRisks;
    let groups: Vec<Option<usize>> = if separate {
        (1..=task.cause_count()).map(Some).collect()
    } else {
        vec![None]
    };
    let mut fits = Vec::with_capacity(groups.len());
    for cause in groups {
        let in_group = |i: usize| cause.is_none() || long.rows[i].cause == cause;
        let (train_idx, valid_idx): (Vec<usize>, Vec<usize>) = (0..long.rows.len())
            .filter(|&i| in_group(i))
            .partition(|&i| holdout.as_ref().is_none_or(|h| !h.contains(&long.rows[i].id)));
        let train = row_set(&long, &encoder, &train_idx, kind);
        let valid = holdout.as_ref().map(|_| row_set(&long, &encoder, &valid_idx, kind));
        let fit = fit_learner(learner, objective, &train.view(), valid.as_ref().map(|v| v.view()).as_ref())?;
        fits.push(fit);
    }
    Ok(FittedReduction {
        kind,
        task_kind: task.kind,
        grid: grid.clone(),
        censoring_rule: rule,
        encoder,
        fits,
        cause_count: task.cause_count(),
        cause_labels: task.cause_labels.clone(),
        state_graph: task.state_graph.clone(),
        schema: task.schema.clone(),
    })
}

/// Fits the piecewise-exponential reduction: Poisson regression of the
/// interval event indicators with log time-at-risk as offset.
pub fn pem_fit(
    task: &SurvivalTask,
    grid: &CutGrid,
    learner: &LearnerSpec,
    options: &DistOptions,
) -> Result<FittedReduction, ReductionError> {
    fit_dist(DistKind::Pem, task, grid, learner, options)
}

/// Fits the discrete-time reduction: binary classification of the interval
/// event indicators.
pub fn dt_fit(
    task: &SurvivalTask,
    grid: &CutGrid,
    learner: &LearnerSpec,
    options: &DistOptions,
) -> Result<FittedReduction, ReductionError> {
    fit_dist(DistKind::Dt, task, grid, learner, options)
}

/// Builds the grid with `strategy` and fits the chosen reduction.
pub fn fit_distribution(
    kind: DistKind,
    task: &SurvivalTask,
    strategy: &CutStrategy,
    learner: &LearnerSpec,
    options: &DistOptions,
) -> Result<FittedReduction, ReductionError> {
    let grid = make_cuts(task, strategy)?;
    fit_dist(kind, task, &grid, learner, options)
}

/// Hazards of one subject: `values[m][j - 1]` for cause or transition `m`
/// and interval `j`. PEM hazards are rates, DT hazards probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Hazards {
    pub values: Vec<Vec<f64>>,
    /// Number of discrete all-cause hazards capped below 1.
    pub capped: usize,
}

impl FittedReduction {
    /// Number of causes (competing risks), transitions (multi-state), or 1.
    fn outcomes(&self) -> usize {
        match self.task_kind {
            TaskKind::MultiState => self.state_graph.as_ref().map_or(1, |g| g.edges.len()),
            _ => self.cause_count,
        }
    }

    pub fn hazards(&self, x: &[f64]) -> Hazards {
        let jn = self.grid.len();
        let m = self.outcomes();
        let mut values = Vec::with_capacity(m);
        for k in 0..m {
            let inputs = (1..=jn).map(|j| RowInput {
                features: x,
                j,
                a_end: self.grid.upper(j),
                cause: if self.task_kind == TaskKind::CompetingRisks { k + 1 } else { 1 },
                edge: if self.task_kind == TaskKind::MultiState { k } else { 0 },
                episode: 1,
                tau: 0.0,
            });
            let (design, _) = self.encoder.encode(inputs);
            let fit = if self.fits.len() > 1 { &self.fits[k] } else { &self.fits[0] };
            values.push(fit.predict_response(&design));
        }
        let mut capped = 0;
        if self.kind == DistKind::Dt && self.task_kind == TaskKind::CompetingRisks {
            for j in 0..jn {
                let total: f64 = values.iter().map(|v| v[j]).sum();
                if total > MAX_DISCRETE_HAZARD {
                    capped += 1;
                    for v in values.iter_mut() {
                        v[j] *= MAX_DISCRETE_HAZARD / total;
                    }
                }
            }
        }
        Hazards { values, capped }
    }

    /// Hazard of each cause/transition at `tau`; the flag is set when `tau`
    /// lies beyond the last cut and the last interval was used.
    pub fn predict_hazard(&self, x: &[f64], tau: f64) -> (Vec<f64>, bool) {
        let h = self.hazards(x);
        let (j, beyond) = match self.grid.interval_of(tau) {
            Some(j) => (j, false),
            None => (self.grid.len(), true),
        };
        (h.values.iter().map(|v| v[j - 1]).collect(), beyond)
    }

    fn all_cause(&self, h: &Hazards) -> Vec<f64> {
        (0..self.grid.len())
            .map(|j| h.values.iter().map(|v| v[j]).sum::<f64>())
            .collect()
    }

    /// All-cause survival curve.
    pub fn survival(&self, x: &[f64]) -> Result<SurvivalCurve, ReductionError> {
        if self.task_kind == TaskKind::MultiState {
            return Err(ReductionError::Unsupported(
                "multi-state fits predict transition matrices, not a survival curve".into(),
            ));
        }
        let h = self.hazards(x);
        let total = self.all_cause(&h);
        Ok(match self.kind {
            DistKind::Pem => SurvivalCurve::PiecewiseExp {
                cuts: self.grid.cuts.clone(),
                hazards: total,
            },
            DistKind::Dt => {
                let mut s = 1.0;
                let values = total
                    .iter()
                    .map(|&hj| {
                        s *= 1.0 - hj.min(1.0);
                        s
                    })
                    .collect();
                SurvivalCurve::Step(StepFunction::new(self.grid.cuts.clone(), values, 1.0))
            }
        })
    }

    /// Cumulative incidence of each cause at the cut points.
    pub fn cif(&self, x: &[f64]) -> Result<Vec<StepFunction>, ReductionError> {
        if self.task_kind == TaskKind::MultiState {
            return Err(ReductionError::Unsupported(
                "cumulative incidences need a single-event or competing-risks fit".into(),
            ));
        }
        let h = self.hazards(x);
        let total = self.all_cause(&h);
        let jn = self.grid.len();
        let mut cif = vec![vec![0.0; jn]; h.values.len()];
        let mut s_prev = 1.0;
        let mut acc = vec![0.0; h.values.len()];
        for j in 0..jn {
            let s_next = match self.kind {
                DistKind::Pem => s_prev * (-total[j] * self.grid.width(j + 1)).exp(),
                DistKind::Dt => s_prev * (1.0 - total[j].min(1.0)),
            };
            for (k, hk) in h.values.iter().enumerate() {
                let inc = match self.kind {
                    DistKind::Pem if total[j] > 0.0 => hk[j] / total[j] * (s_prev - s_next),
                    DistKind::Pem => 0.0,
                    DistKind::Dt => hk[j] * s_prev,
                };
                acc[k] += inc;
                cif[k][j] = acc[k];
            }
            s_prev = s_next;
        }
        Ok(cif
            .into_iter()
            .map(|v| StepFunction::new(self.grid.cuts.clone(), v, 0.0))
            .collect())
    }

    fn transition_rates(&self, x: &[f64]) -> Result<(&StateGraph, Hazards), ReductionError> {
        let graph = self.state_graph.as_ref().filter(|_| self.task_kind == TaskKind::MultiState).ok_or_else(|| {
            ReductionError::Unsupported("transition matrices need a multi-state fit".into())
        })?;
        Ok((graph, self.hazards(x)))
    }

    /// PEM transition matrix `P(s, tau)`: product over grid intervals of
    /// `exp(dt Q)`, where `Q` is the interval's constant transition-rate
    /// matrix.
    pub fn pem_transition_matrix(&self, x: &[f64], s: f64, tau: f64) -> Result<Matrix, ReductionError> {
        if self.kind != DistKind::Pem {
            return Err(ReductionError::Unsupported("not a PEM fit".into()));
        }
        if s >= tau || s.is_nan() || tau.is_nan() {
            return Err(ReductionError::Invalid(format!("need s < tau, got {} and {}", s, tau)));
        }
        let (graph, h) = self.transition_rates(x)?;
        let n = graph.states.len();
        let mut p = identity(n);
        let jn = self.grid.len();
        for j in 1..=jn {
            let lo = self.grid.lower(j).max(s);
            let hi = if j == jn { tau } else { self.grid.upper(j).min(tau) };
            if hi <= lo {
                continue;
            }
            let mut q = vec![vec![0.0; n]; n];
            for (e, &(from, to)) in graph.edges.iter().enumerate() {
                q[from][to] += h.values[e][j - 1];
                q[from][from] -= h.values[e][j - 1];
            }
            let m = expm_generator(&q, hi - lo);
            p = matmul(&p, &m);
        }
        Ok(p)
    }

    /// DT transition matrix over intervals `j_s..=j_tau` (1-based). Rows
    /// whose off-diagonal hazards sum above 1 are scaled down; the count of
    /// such rows is returned with the matrix.
    pub fn dt_transition_matrix(&self, x: &[f64], j_s: usize, j_tau: usize) -> Result<(Matrix, usize), ReductionError> {
        if self.kind != DistKind::Dt {
            return Err(ReductionError::Unsupported("not a DT fit".into()));
        }
        let (graph, h) = self.transition_rates(x)?;
        let n = graph.states.len();
        if j_s < 1 || j_tau > self.grid.len() || j_s > j_tau {
            return Err(ReductionError::Invalid(format!("interval range {}..={} is outside the grid", j_s, j_tau)));
        }
        let mut p = identity(n);
        let mut clipped = 0;
        for j in j_s..=j_tau {
            let mut m = vec![vec![0.0; n]; n];
            for (e, &(from, to)) in graph.edges.iter().enumerate() {
                m[from][to] += h.values[e][j - 1];
            }
            for (a, row) in m.iter_mut().enumerate() {
                let off: f64 = row.iter().sum();
                if off > 1.0 {
                    clipped += 1;
                    row.iter_mut().for_each(|v| *v /= off);
                }
                let off: f64 = row.iter().sum();
                row[a] = 1.0 - off;
            }
            p = matmul(&p, &m);
        }
        Ok((p, clipped))
    }

    /// Aligns a task's features to the training schema; returns per-subject
    /// `(id, features)` and the number of unseen categorical levels.
    pub fn align(&self, task: &SurvivalTask) -> Result<(FeatureRows, usize), ReductionError> {
        align_subjects(&self.schema, task)
    }
}

pub(crate) fn align_subjects(
    schema: &FeatureSchema,
    task: &SurvivalTask,
) -> Result<(FeatureRows, usize), ReductionError> {
    let mut unknown = 0;
    let mut out = Vec::new();
    for (id, x) in task.subject_features() {
        let (row, u) = schema.align_row(&task.schema, &x)?;
        unknown += u;
        out.push((id, row));
    }
    Ok((out, unknown))
}

/// Writes predicted curves as `id,time,quantity,cause,value`: survival at
/// every cut, hazards per interval end point, cumulative incidences for
/// competing risks, and RMST at each requested horizon.
pub fn write_curves<W: Write>(
    fit: &FittedReduction,
    subjects: &[(String, Vec<f64>)],
    horizons: &[f64],
    writer: W,
) -> Result<(), ReductionError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "time", "quantity", "cause", "value"])?;
    let cause_label = |k: usize| fit.cause_labels.get(k).cloned().unwrap_or_else(|| (k + 1).to_string());
    for (id, x) in subjects {
        if fit.task_kind == TaskKind::MultiState {
            let graph = fit.state_graph.as_ref().expect("multi-state fit has a graph");
            let h = fit.hazards(x);
            for (e, hv) in h.values.iter().enumerate() {
                for (j, v) in hv.iter().enumerate() {
                    w.write_record([id, &format_number(fit.grid.cuts[j]), "hazard", &graph.edge_label(e), &format_number(*v)])?;
                }
            }
            continue;
        }
        let curve = fit.survival(x)?;
        w.write_record([id.as_str(), "0", "survival", "", "1"])?;
        for &t in &fit.grid.cuts {
            w.write_record([id, &format_number(t), "survival", "", &format_number(curve.eval(t))])?;
        }
        let h = fit.hazards(x);
        let multi = fit.task_kind == TaskKind::CompetingRisks;
        for (k, hv) in h.values.iter().enumerate() {
            let label = if multi { cause_label(k) } else { String::new() };
            for (j, v) in hv.iter().enumerate() {
                w.write_record([id, &format_number(fit.grid.cuts[j]), "hazard", &label, &format_number(*v)])?;
            }
        }
        if multi {
            for (k, c) in fit.cif(x)?.iter().enumerate() {
                for (t, v) in c.knots.iter().zip(&c.values) {
                    w.write_record([id, &format_number(*t), "cif", &cause_label(k), &format_number(*v)])?;
                }
            }
        }
        for &tau in horizons {
            w.write_record([id, &format_number(tau), "rmst", "", &format_number(curve.rmst(tau))])?;
        }
    }
    w.flush()?;
    Ok(())
}

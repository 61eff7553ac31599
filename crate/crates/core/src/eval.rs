//! Discrimination and calibration metrics, subject-grouped resampling,
//! random-search tuning and a benchmark harness with a Kaplan–Meier fallback.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{format_number, SurvivalTask, TaskKind};
use crate::error::ReductionError;
use crate::estimators::{censoring_km, StepFunction};
use crate::learners::LearnerSpec;
use crate::model::{fit_model, FittedModel, ModelSpec, ReductionKind};
use crate::partition::{quantile_type1, CutStrategy};
use crate::reduce_dist::SurvivalCurve;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("risk, time and status vectors have different lengths")]
    LengthMismatch,
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{subjects} subjects cannot fill {folds} folds")]
    TooFewSubjects { subjects: usize, folds: usize },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("unknown tunable parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` does not apply to a {learner} learner")]
    ParameterMismatch { name: String, learner: String },
    #[error("benchmarks need single-event tasks; `{0}` is not")]
    NotSingleEvent(String),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

// ---------------------------------------------------------------- metrics

struct Fenwick(Vec<usize>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn below(&self, mut i: usize) -> usize {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's concordance index. Higher risk must mean earlier failure.
/// A pair is comparable when the earlier time is an event and the times
/// differ; tied risks count one half. Returns 1/2 with no comparable pairs.
pub fn harrell_c(risk: &[f64], times: &[f64], status: &[u8]) -> Result<f64, EvalError> {
    let n = risk.len();
    if times.len() != n || status.len() != n {
        return Err(EvalError::LengthMismatch);
    }
    // dense ranks of the risks
    let mut by_risk: Vec<usize> = (0..n).collect();
    by_risk.sort_by(|&a, &b| risk[a].total_cmp(&risk[b]));
    let mut rank = vec![0usize; n];
    let mut r = 0;
    for k in 0..n {
        if k > 0 && risk[by_risk[k]] != risk[by_risk[k - 1]] {
            r += 1;
        }
        rank[by_risk[k]] = r;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick(vec![0; r + 2]);
    let (mut inserted, mut comparable, mut concordant) = (0usize, 0usize, 0.0f64);
    let mut k = 0;
    while k < n {
        let mut end = k;
        while end < n && times[order[end]] == times[order[k]] {
            end += 1;
        }
        for &i in &order[k..end] {
            if status[i] == 1 {
                let lower = tree.below(rank[i]);
                let tied = tree.below(rank[i] + 1) - lower;
                comparable += inserted;
                concordant += lower as f64 + 0.5 * tied as f64;
            }
        }
        for &i in &order[k..end] {
            tree.add(rank[i]);
            inserted += 1;
        }
        k = end;
    }
    Ok(if comparable == 0 {
        0.5
    } else {
        concordant / comparable as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsbsResult {
    pub value: f64,
    /// Terms dropped because the censoring survival was zero.
    pub dropped: usize,
}

/// Brier score at `t` with inverse-probability-of-censoring weights. Terms
/// whose weight is undefined are dropped and the mean taken over the rest.
pub fn brier_score(
    survival_at_t: &[f64],
    times: &[f64],
    status: &[u8],
    g: &StepFunction,
    t: f64,
) -> (f64, usize) {
    let (mut sum, mut used, mut dropped) = (0.0, 0usize, 0usize);
    for i in 0..times.len() {
        let s = survival_at_t[i];
        if times[i] <= t && status[i] == 1 {
            let gv = g.left_limit(times[i]);
            if gv > 0.0 {
                sum += s * s / gv;
            } else {
                dropped += 1;
                continue;
            }
        } else if times[i] > t {
            let gv = g.eval(t);
            if gv > 0.0 {
                sum += (1.0 - s) * (1.0 - s) / gv;
            } else {
                dropped += 1;
                continue;
            }
        }
        used += 1;
    }
    (if used == 0 { 0.0 } else { sum / used as f64 }, dropped)
}

/// Time points the integrated Brier score is evaluated at: 0, every curve
/// knot and observed time up to `tau_max`, and `tau_max`.
pub fn isbs_grid(curves: &[SurvivalCurve], times: &[f64], tau_max: f64) -> Vec<f64> {
    let mut grid = vec![0.0, tau_max];
    for c in curves {
        grid.extend(c.knots().iter().copied().filter(|&k| k > 0.0 && k <= tau_max));
    }
    grid.extend(times.iter().copied().filter(|&k| k > 0.0 && k <= tau_max));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Integrated survival Brier score over `[0, tau_max]` by the trapezoid
/// rule, divided by `tau_max`. `g` is the censoring survival of the
/// training data.
pub fn isbs(
    curves: &[SurvivalCurve],
    times: &[f64],
    status: &[u8],
    g: &StepFunction,
    tau_max: f64,
) -> Result<IsbsResult, EvalError> {
    if curves.len() != times.len() || status.len() != times.len() {
        return Err(EvalError::LengthMismatch);
    }
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(EvalError::BadHorizon(tau_max));
    }
    let grid = isbs_grid(curves, times, tau_max);
    let scores: Vec<(f64, usize)> = grid
        .par_iter()
        .map(|&t| {
            let s: Vec<f64> = curves.iter().map(|c| c.eval(t)).collect();
            brier_score(&s, times, status, g, t)
        })
        .collect();
    let mut area = 0.0;
    for k in 1..grid.len() {
        area += 0.5 * (scores[k].0 + scores[k - 1].0) * (grid[k] - grid[k - 1]);
    }
    Ok(IsbsResult {
        value: area / tau_max,
        dropped: scores.iter().map(|s| s.1).sum(),
    })
}

/// Default evaluation horizon: the 80th percentile of observed times.
pub fn default_tau_max(times: &[f64]) -> f64 {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    quantile_type1(&t, 0.8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    HarrellC,
    Isbs,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::HarrellC => "harrell_c",
            Metric::Isbs => "isbs",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::HarrellC
    }
}

/// Scores `model` on `test`, with censoring weights and the horizon taken
/// from `train`.
pub fn score_model(
    model: &FittedModel,
    train: &SurvivalTask,
    test: &SurvivalTask,
    metric: Metric,
) -> Result<f64, EvalError> {
    let (train_t, train_d) = single_event(train)?;
    let (t, d) = single_event(test)?;
    let tau_max = default_tau_max(&train_t);
    let (subjects, _) = model.align(test)?;
    match metric {
        Metric::HarrellC => {
            let risk = subjects
                .iter()
                .map(|(_, x)| model.risk(x, tau_max))
                .collect::<Result<Vec<_>, _>>()?;
            harrell_c(&risk, &t, &d)
        }
        Metric::Isbs => {
            let g = censoring_km(&train_t, &train_d).map_err(ReductionError::from)?;
            let curves = subjects
                .iter()
                .map(|(_, x)| model.survival_curve(x))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(isbs(&curves, &t, &d, &g, tau_max)?.value)
        }
    }
}

fn single_event(task: &SurvivalTask) -> Result<(Vec<f64>, Vec<u8>), EvalError> {
    if task.kind != TaskKind::SingleEvent {
        return Err(EvalError::NotSingleEvent(task.kind.to_string()));
    }
    Ok(task.times_status().expect("single-event task"))
}

// ---------------------------------------------------------------- resampling

/// Subject-level fold assignment for repeated k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplingPlan {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// `assignment[r][id]` is the fold of subject `id` in repeat `r`.
    pub assignment: Vec<BTreeMap<String, usize>>,
}

impl ResamplingPlan {
    pub fn new(ids: &[String], folds: usize, repeats: usize, seed: u64) -> Result<Self, EvalError> {
        if folds < 2 {
            return Err(EvalError::TooFewFolds(folds));
        }
        let mut unique: Vec<String> = ids.to_vec();
        unique.sort();
        unique.dedup();
        if unique.len() < folds {
            return Err(EvalError::TooFewSubjects {
                subjects: unique.len(),
                folds,
            });
        }
        let assignment = (0..repeats)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
                let mut shuffled = unique.clone();
                shuffled.shuffle(&mut rng);
                shuffled.into_iter().enumerate().map(|(i, id)| (id, i % folds)).collect()
            })
            .collect();
        Ok(ResamplingPlan {
            folds,
            repeats,
            seed,
            assignment,
        })
    }

    /// Plan for `task` with the repeat count from [`default_repeats`].
    pub fn for_task(task: &SurvivalTask, folds: usize, seed: u64) -> Result<Self, EvalError> {
        Self::new(&task.subject_ids(), folds, default_repeats(task.event_times().len()), seed)
    }
}

/// 3 repeats up to 500 events, 2 up to 1000, 1 beyond.
pub fn default_repeats(events: usize) -> usize {
    match events {
        0..=500 => 3,
        501..=1000 => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub repeat: usize,
    pub fold: usize,
    pub train: SurvivalTask,
    pub test: SurvivalTask,
}

/// Train/test pairs, one per (repeat, fold). Every record of a subject goes
/// to the same side.
pub fn grouped_cv(task: &SurvivalTask, plan: &ResamplingPlan) -> Vec<Split> {
    let mut out = Vec::with_capacity(plan.folds * plan.repeats);
    for (r, assign) in plan.assignment.iter().enumerate() {
        for f in 0..plan.folds {
            let test_ids: HashSet<String> =
                assign.iter().filter(|(_, &k)| k == f).map(|(id, _)| id.clone()).collect();
            let train_ids: HashSet<String> =
                assign.iter().filter(|(_, &k)| k != f).map(|(id, _)| id.clone()).collect();
            out.push(Split {
                repeat: r,
                fold: f,
                train: task.subset(&train_ids),
                test: task.subset(&test_ids),
            });
        }
    }
    out
}

// ---------------------------------------------------------------- tuning

/// A tunable hyperparameter and the range it is searched over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneParam {
    /// One of `lambda`, `learning_rate`, `max_depth`, `min_leaf`,
    /// `nrounds`, `reg_lambda`, `intervals`.
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    /// Sample uniformly on the log scale.
    #[serde(default)]
    pub log: bool,
}

impl TuneParam {
    pub fn new(name: &str, lower: f64, upper: f64, log: bool) -> Self {
        TuneParam {
            name: name.into(),
            lower,
            upper,
            log,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        if self.log {
            (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp()
        } else {
            self.lower + u * (self.upper - self.lower)
        }
    }
}

/// Search spaces used when none is configured.
pub fn default_space(learner: &LearnerSpec) -> Vec<TuneParam> {
    match learner {
        LearnerSpec::Glm { .. } => vec![TuneParam::new("lambda", 1e-4, 10.0, true)],
        LearnerSpec::Gbt(_) => vec![
            TuneParam::new("learning_rate", 0.01, 0.3, true),
            TuneParam::new("max_depth", 1.0, 6.0, false),
            TuneParam::new("nrounds", 20.0, 500.0, true),
            TuneParam::new("min_leaf", 1.0, 50.0, true),
        ],
    }
}

/// Sets a named hyperparameter on `spec`; integer parameters are rounded.
pub fn set_param(spec: &mut ModelSpec, name: &str, value: f64) -> Result<(), EvalError> {
    let mismatch = |spec: &ModelSpec| EvalError::ParameterMismatch {
        name: name.into(),
        learner: spec.learner.name().into(),
    };
    let int = value.round().max(1.0) as usize;
    match (name, &mut spec.learner) {
        ("lambda", LearnerSpec::Glm { lambda }) => *lambda = value,
        ("learning_rate", LearnerSpec::Gbt(p)) => p.learning_rate = value,
        ("max_depth", LearnerSpec::Gbt(p)) => p.max_depth = int,
        ("min_leaf", LearnerSpec::Gbt(p)) => p.min_leaf = int,
        ("nrounds", LearnerSpec::Gbt(p)) => p.nrounds = int,
        ("reg_lambda", LearnerSpec::Gbt(p)) => p.reg_lambda = value,
        ("intervals", _) => spec.cuts = CutStrategy::EventQuantiles { intervals: int },
        ("lambda" | "learning_rate" | "max_depth" | "min_leaf" | "nrounds" | "reg_lambda", _) => {
            return Err(mismatch(spec))
        }
        _ => return Err(EvalError::UnknownParameter(name.into())),
    }
    Ok(())
}

/// Mean inner cross-validated score of `spec` on `task`; failures score as
/// the worst possible value.
fn inner_score(spec: &ModelSpec, task: &SurvivalTask, metric: Metric, seed: u64) -> f64 {
    let worst = if metric.higher_is_better() {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let Ok(plan) = ResamplingPlan::new(&task.subject_ids(), 3, 1, seed) else {
        return worst;
    };
    let mut total = 0.0;
    for split in grouped_cv(task, &plan) {
        let s = fit_model(spec, &split.train)
            .map_err(EvalError::from)
            .and_then(|m| score_model(&m, &split.train, &split.test, metric));
        match s {
            Ok(v) if v.is_finite() => total += v,
            _ => return worst,
        }
    }
    total / plan.folds as f64
}

/// Random search with inner 3-fold cross-validation. Returns the best spec
/// (the unchanged spec when `budget` is 0 or `space` is empty).
pub fn random_search(
    spec: &ModelSpec,
    space: &[TuneParam],
    task: &SurvivalTask,
    metric: Metric,
    budget: usize,
    seed: u64,
) -> Result<ModelSpec, EvalError> {
    if budget == 0 || space.is_empty() {
        return Ok(spec.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut c = spec.clone();
        for p in space {
            set_param(&mut c, &p.name, p.sample(&mut rng))?;
        }
        candidates.push(c);
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| inner_score(c, task, metric, seed ^ 0x5eed))
        .collect();
    let mut best = 0;
    for k in 1..scores.len() {
        let better = if metric.higher_is_better() {
            scores[k] > scores[best]
        } else {
            scores[k] < scores[best]
        };
        if better {
            best = k;
        }
    }
    Ok(candidates.swap_remove(best))
}

// ---------------------------------------------------------------- benchmark

/// A named model with its search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchLearner {
    pub name: String,
    pub spec: ModelSpec,
    #[serde(default)]
    pub space: Vec<TuneParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub folds: usize,
    /// Defaults to [`default_repeats`] of each task's event count.
    pub repeats: Option<usize>,
    pub metrics: Vec<Metric>,
    /// Random-search evaluations per learner and outer split; `None` means
    /// 50 per tunable parameter.
    pub budget: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            folds: 3,
            repeats: None,
            metrics: vec![Metric::HarrellC, Metric::Isbs],
            budget: Some(0),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task: String,
    pub learner: String,
    pub repeat: usize,
    pub fold: usize,
    pub metric: Metric,
    pub value: f64,
    /// The learner failed and the Kaplan–Meier score was used.
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Mean and sample standard deviation of one (task, learner, metric) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub task: String,
    pub learner: String,
    pub metric: Metric,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub fallbacks: usize,
}

impl ScoreTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["task", "learner", "repeat", "fold", "metric", "value", "fallback"])?;
        for r in &self.rows {
            w.write_record([
                r.task.as_str(),
                &r.learner,
                &r.repeat.to_string(),
                &r.fold.to_string(),
                r.metric.name(),
                &format_number(r.value),
                if r.fallback_used { "true" } else { "false" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut cells: BTreeMap<(String, String, Metric), (Vec<f64>, usize)> = BTreeMap::new();
        let mut learner_order: Vec<String> = Vec::new();
        for r in &self.rows {
            if !learner_order.contains(&r.learner) {
                learner_order.push(r.learner.clone());
            }
            let cell = cells.entry((r.task.clone(), r.learner.clone(), r.metric)).or_default();
            cell.0.push(r.value);
            cell.1 += usize::from(r.fallback_used);
        }
        let mut out: Vec<Aggregate> = cells
            .into_iter()
            .map(|((task, learner, metric), (v, fallbacks))| {
                let n = v.len();
                let mean = v.iter().sum::<f64>() / n as f64;
                let sd = if n > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                Aggregate {
                    task,
                    learner,
                    metric,
                    mean,
                    sd,
                    n,
                    fallbacks,
                }
            })
            .collect();
        out.sort_by_key(|a| {
            (
                a.metric,
                learner_order.iter().position(|l| *l == a.learner),
                a.task.clone(),
            )
        });
        out
    }

    /// One row per (metric, learner), one column per task, cells
    /// `mean (sd)` scaled by 100.
    pub fn write_aggregate_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let agg = self.aggregate();
        let mut tasks: Vec<String> = Vec::new();
        for r in &self.rows {
            if !tasks.contains(&r.task) {
                tasks.push(r.task.clone());
            }
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["metric".to_string(), "learner".into()];
        header.extend(tasks.iter().cloned());
        w.write_record(&header)?;
        let mut keys: Vec<(Metric, String)> = Vec::new();
        for a in &agg {
            if !keys.contains(&(a.metric, a.learner.clone())) {
                keys.push((a.metric, a.learner.clone()));
            }
        }
        for (metric, learner) in keys {
            let mut row = vec![metric.name().to_string(), learner.clone()];
            for t in &tasks {
                let cell = agg
                    .iter()
                    .find(|a| a.metric == metric && a.learner == learner && &a.task == t)
                    .map(|a| format!("{:.2} ({:.2})", 100.0 * a.mean, 100.0 * a.sd))
                    .unwrap_or_default();
                row.push(cell);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nested benchmark: for every task and outer split, each learner is tuned
/// by random search on the outer training part (first metric), refitted and
/// scored on the outer test part. A learner that fails gets the
/// Kaplan–Meier baseline's score with `fallback_used` set.
pub fn benchmark(
    tasks: &[(String, SurvivalTask)],
    learners: &[BenchLearner],
    config: &BenchConfig,
) -> Result<ScoreTable, EvalError> {
    let km_spec = ModelSpec::new(ReductionKind::Km, LearnerSpec::glm());
    let mut rows = Vec::new();
    for (name, task) in tasks {
        if task.kind != TaskKind::SingleEvent {
            return Err(EvalError::NotSingleEvent(name.clone()));
        }
        let repeats = config.repeats.unwrap_or_else(|| default_repeats(task.event_times().len()));
        let plan = ResamplingPlan::new(&task.subject_ids(), config.folds, repeats, config.seed)?;
        let splits = grouped_cv(task, &plan);
        let jobs: Vec<(usize, usize)> =
            (0..splits.len()).flat_map(|s| (0..learners.len()).map(move |l| (s, l))).collect();
        let results: Vec<Vec<ScoreRow>> = jobs
            .par_iter()
            .map(|&(s, l)| {
                let split = &splits[s];
                let learner = &learners[l];
                let seed = config.seed ^ ((s as u64) << 20) ^ l as u64;
                let fitted = tuned_fit(learner, &split.train, config, seed);
                let km = fit_model(&km_spec, &split.train);
                config
                    .metrics
                    .iter()
                    .map(|&metric| {
                        let own = fitted
                            .as_ref()
                            .map_err(|e| e.to_string())
                            .and_then(|m| {
                                score_model(m, &split.train, &split.test, metric).map_err(|e| e.to_string())
                            })
                            .ok()
                            .filter(|v| v.is_finite());
                        let (value, fallback_used) = match own {
                            Some(v) => (v, false),
                            None => {
                                let v = km
                                    .as_ref()
                                    .ok()
                                    .and_then(|m| score_model(m, &split.train, &split.test, metric).ok())
                                    .unwrap_or(f64::NAN);
                                (v, true)
                            }
                        };
                        ScoreRow {
                            task: name.clone(),
                            learner: learner.name.clone(),
                            repeat: split.repeat,
                            fold: split.fold,
                            metric,
                            value,
                            fallback_used,
                        }
                    })
                    .collect()
            })
            .collect();
        rows.extend(results.into_iter().flatten());
    }
    Ok(ScoreTable { rows })
}

fn tuned_fit(
    learner: &BenchLearner,
    train: &SurvivalTask,
    config: &BenchConfig,
    seed: u64,
) -> Result<FittedModel, EvalError> {
    let budget = config.budget.unwrap_or(50 * learner.space.len());
    let metric = config.metrics.first().copied().unwrap_or(Metric::HarrellC);
    let spec = random_search(&learner.spec, &learner.space, train, metric, budget, seed)?;
    Ok(fit_model(&spec, train)?)
}

/// Counts of subjects per fold in each repeat; used by reports and tests.
pub fn fold_sizes(plan: &ResamplingPlan) -> Vec<Vec<usize>> {
    plan.assignment
        .iter()
        .map(|a| {
            let mut c: HashMap<usize, usize> = HashMap::new();
            for &f in a.values() {
                *c.entry(f).or_default() += 1;
            }
            (0..plan.folds).map(|f| c.get(&f).copied().unwrap_or(0)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Records, StartStopRecord, StateGraph};
    use crate::estimators::kaplan_meier;
    use approx::assert_abs_diff_eq;

    fn brute_c(risk: &[f64], t: &[f64], d: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..t.len() {
            for j in 0..t.len() {
                if d[i] == 1 && t[i] < t[j] {
                    den += 1.0;
                    num += if risk[i] > risk[j] {
                        1.0
                    } else if risk[i] == risk[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        if den == 0.0 {
            0.5
        } else {
            num / den
        }
    }

    #[test]
    fn c_index_examples() {
        assert_eq!(harrell_c(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(harrell_c(&[1.0; 3], &[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap(), 0.5);
        assert_eq!(harrell_c(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(harrell_c(&[1.0, 2.0], &[1.0, 2.0], &[0, 0]).unwrap(), 0.5);
        assert!(harrell_c(&[1.0], &[1.0, 2.0], &[0, 0]).is_err());
    }

    #[test]
    fn c_index_matches_enumeration_with_ties() {
        let t = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 5.0];
        let d = [1, 1, 0, 1, 1, 1, 0];
        let r = [0.5, 0.5, 0.1, 0.9, 0.2, 0.2, 0.3];
        assert_abs_diff_eq!(harrell_c(&r, &t, &d).unwrap(), brute_c(&r, &t, &d), epsilon = 1e-15);
    }

    #[test]
    fn brier_constant_half_uncensored() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let d = [1; 4];
        let curves = vec![SurvivalCurve::Step(StepFunction::constant(0.5)); 4];
        let g = censoring_km(&t, &d).unwrap();
        let r = isbs(&curves, &t, &d, &g, 3.0).unwrap();
        assert_abs_diff_eq!(r.value, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn brier_oracle_is_zero() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let d = [1; 4];
        let curves: Vec<SurvivalCurve> = t
            .iter()
            .map(|&ti| SurvivalCurve::Step(StepFunction::new(vec![ti], vec![0.0], 1.0)))
            .collect();
        let g = censoring_km(&t, &d).unwrap();
        assert_abs_diff_eq!(isbs(&curves, &t, &d, &g, 3.5).unwrap().value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn brier_three_subject_censored_by_hand() {
        // G: censoring at 2 with 2 at risk -> 1/2 from t = 2
        let t = [1.0, 2.0, 3.0];
        let d = [1, 0, 1];
        let g = censoring_km(&t, &d).unwrap();
        let km = kaplan_meier(&t, &d).unwrap();
        let curves = vec![SurvivalCurve::Step(km); 3];
        // grid 0, 1, 2, 2.5; S = 2/3 from 1 on.
        // BS(0) = 0; BS(1) = (4/9 + 1/9 + 1/9) / 3;
        // BS(2) = BS(2.5) = (4/9 + 0 + (1/9) / (1/2)) / 3
        let bs1 = (6.0 / 9.0) / 3.0;
        let bs2 = (6.0 / 9.0) / 3.0;
        let expect = (0.5 * bs1 + 0.5 * (bs1 + bs2) + 0.5 * bs2) / 2.5;
        assert_abs_diff_eq!(isbs(&curves, &t, &d, &g, 2.5).unwrap().value, expect, epsilon = 1e-12);
    }

    #[test]
    fn plan_partitions_subjects() {
        let ids: Vec<String> = (1..=6).map(|i| i.to_string()).collect();
        let plan = ResamplingPlan::new(&ids, 3, 2, 7).unwrap();
        assert_eq!(fold_sizes(&plan), vec![vec![2, 2, 2], vec![2, 2, 2]]);
        assert!(ResamplingPlan::new(&ids, 1, 1, 7).is_err());
        assert!(ResamplingPlan::new(&ids[..2], 3, 1, 7).is_err());
        assert_eq!(plan, ResamplingPlan::new(&ids, 3, 2, 7).unwrap());
    }

    #[test]
    fn repeats_follow_event_counts() {
        assert_eq!(default_repeats(500), 3);
        assert_eq!(default_repeats(501), 2);
        assert_eq!(default_repeats(1000), 2);
        assert_eq!(default_repeats(1001), 1);
    }

    #[test]
    fn start_stop_subjects_stay_together() {
        let mut recs = Vec::new();
        for s in 0..6 {
            for e in 0..3u32 {
                recs.push(StartStopRecord {
                    id: format!("s{s}"),
                    from: 0,
                    to: 1,
                    episode: e + 1,
                    entry: e as f64,
                    exit: e as f64 + 1.0,
                    status: u8::from(e == 2),
                    features: vec![],
                });
            }
        }
        let task = SurvivalTask {
            kind: TaskKind::MultiState,
            records: Records::StartStop(recs),
            state_graph: Some(StateGraph::from_labels(&[("0", "1")])),
            schema: Default::default(),
            cause_labels: vec![],
        };
        let plan = ResamplingPlan::new(&task.subject_ids(), 3, 1, 1).unwrap();
        for split in grouped_cv(&task, &plan) {
            assert_eq!(split.test.start_stop().unwrap().len(), 6);
            assert_eq!(split.train.start_stop().unwrap().len(), 12);
        }
    }

    #[test]
    fn set_param_checks_learner() {
        let mut s = ModelSpec::default();
        set_param(&mut s, "lambda", 0.5).unwrap();
        assert_eq!(s.learner, LearnerSpec::Glm { lambda: 0.5 });
        assert!(matches!(set_param(&mut s, "max_depth", 3.0), Err(EvalError::ParameterMismatch { .. })));
        assert!(matches!(set_param(&mut s, "nope", 3.0), Err(EvalError::UnknownParameter(_))));
    }

    fn small_task() -> SurvivalTask {
        let n = 40;
        let times: Vec<f64> = (0..n).map(|i| 0.2 + ((i * 13) % 17) as f64 * 0.3).collect();
        let status: Vec<u8> = (0..n).map(|i| u8::from(i % 5 != 0)).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![times[i] * 0.5 + (i % 3) as f64]).collect();
        SurvivalTask::with_features(&times, &status, &["x"], &x).unwrap()
    }

    #[test]
    fn km_baseline_scores_half_and_fallback_kicks_in() {
        let task = small_task();
        let learners = vec![
            BenchLearner {
                name: "km".into(),
                spec: ModelSpec::new(ReductionKind::Km, LearnerSpec::glm()),
                space: vec![],
            },
            BenchLearner {
                name: "broken".into(),
                spec: ModelSpec::new(ReductionKind::Pem, LearnerSpec::glm()).with_formula("missing"),
                space: vec![],
            },
        ];
        let config = BenchConfig {
            repeats: Some(1),
            ..Default::default()
        };
        let table = benchmark(&[("t".into(), task)], &learners, &config).unwrap();
        for r in &table.rows {
            if r.learner == "km" {
                assert!(!r.fallback_used);
                if r.metric == Metric::HarrellC {
                    assert_eq!(r.value, 0.5);
                }
            } else {
                assert!(r.fallback_used);
            }
        }
        let km: Vec<f64> = table.rows.iter().filter(|r| r.learner == "km").map(|r| r.value).collect();
        let broken: Vec<f64> = table.rows.iter().filter(|r| r.learner == "broken").map(|r| r.value).collect();
        assert_eq!(km, broken);
    }

    #[test]
    fn benchmark_is_deterministic_and_aggregates() {
        let task = small_task();
        let learners = vec![BenchLearner {
            name: "pem".into(),
            spec: ModelSpec::new(ReductionKind::Pem, LearnerSpec::glm()),
            space: vec![TuneParam::new("lambda", 1e-3, 1.0, true)],
        }];
        let config = BenchConfig {
            repeats: Some(2),
            budget: Some(3),
            ..Default::default()
        };
        let tasks = [("t".to_string(), task)];
        let a = benchmark(&tasks, &learners, &config).unwrap();
        let b = benchmark(&tasks, &learners, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2 * 3 * 2);
        let agg = a.aggregate();
        assert_eq!(agg.len(), 2);
        assert!(agg.iter().all(|x| x.n == 6));
        let mut buf = Vec::new();
        a.write_aggregate_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,learner,t\nharrell_c,pem,"), "{text}");
    }
}

//! Non-parametric estimators: Kaplan–Meier, censoring Kaplan–Meier,
//! Nelson–Aalen and the Aalen–Johansen transition matrix.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{format_number, Records, SurvivalTask, TaskKind};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no observations")]
    Empty,
    #[error("times and status have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("times must be positive and finite")]
    BadTime,
    #[error("transition out of state `{state}` at time {time} with nobody at risk")]
    NoneAtRisk { state: String, time: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Right-continuous piecewise-constant function on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Value on `[0, knots[0])`.
    pub left_value: f64,
}

impl StepFunction {
    pub fn constant(value: f64) -> Self {
        StepFunction {
            knots: vec![],
            values: vec![],
            left_value: value,
        }
    }

    pub fn new(knots: Vec<f64>, values: Vec<f64>, left_value: f64) -> Self {
        debug_assert_eq!(knots.len(), values.len());
        debug_assert!(knots.windows(2).all(|w| w[0] < w[1]));
        StepFunction {
            knots,
            values,
            left_value,
        }
    }

    /// Value at `t`; constant beyond the last knot.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= t);
        if i == 0 {
            self.left_value
        } else {
            self.values[i - 1]
        }
    }

    /// Left limit `f(t-)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k < t);
        if i == 0 {
            self.left_value
        } else {
            self.values[i - 1]
        }
    }

    /// Exact integral over `[0, tau]`.
    pub fn integral(&self, tau: f64) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        let mut value = self.left_value;
        for (&k, &v) in self.knots.iter().zip(&self.values) {
            if k >= tau {
                break;
            }
            acc += value * (k - prev);
            prev = k;
            value = v;
        }
        if tau > prev {
            acc += value * (tau - prev);
        }
        acc
    }

    /// Two-column CSV with a leading comment line.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: &str) -> Result<(), EstimatorError> {
        writeln!(w, "# {}", comment)?;
        writeln!(w, "knot,value")?;
        writeln!(w, "0,{}", format_number(self.left_value))?;
        for (k, v) in self.knots.iter().zip(&self.values) {
            writeln!(w, "{},{}", format_number(*k), format_number(*v))?;
        }
        Ok(())
    }
}

fn check(times: &[f64], status: &[u8]) -> Result<(), EstimatorError> {
    if times.len() != status.len() {
        return Err(EstimatorError::LengthMismatch(times.len(), status.len()));
    }
    if times.is_empty() {
        return Err(EstimatorError::Empty);
    }
    if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(EstimatorError::BadTime);
    }
    Ok(())
}

/// Risk-set counts at each distinct time with at least one "event":
/// `(time, events, at_risk)`. The risk set at `u` is `{i : entry_i < u <= t_i}`,
/// so observations tied with the events at `u` are still at risk.
fn risk_table(entry: Option<&[f64]>, times: &[f64], is_event: impl Fn(usize) -> bool) -> Vec<(f64, f64, f64)> {
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut entries: Vec<f64> = entry.map(|e| e.to_vec()).unwrap_or_default();
    entries.sort_by(f64::total_cmp);

    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let u = times[order[i]];
        let mut d = 0usize;
        let mut k = i;
        while k < n && times[order[k]] == u {
            if is_event(order[k]) {
                d += 1;
            }
            k += 1;
        }
        if d > 0 {
            // times >= u, minus late entrants with entry >= u
            let mut at_risk = n - i;
            if entry.is_some() {
                at_risk -= entries.len() - entries.partition_point(|&e| e < u);
            }
            out.push((u, d as f64, at_risk as f64));
        }
        i = k;
    }
    out
}

fn product_limit(table: &[(f64, f64, f64)]) -> StepFunction {
    let mut s = 1.0;
    let mut knots = Vec::with_capacity(table.len());
    let mut values = Vec::with_capacity(table.len());
    for &(u, d, n) in table {
        s *= 1.0 - d / n;
        knots.push(u);
        values.push(s);
    }
    StepFunction::new(knots, values, 1.0)
}

/// Product-limit survival estimate. Events precede censorings at tied times.
pub fn kaplan_meier(times: &[f64], status: &[u8]) -> Result<StepFunction, EstimatorError> {
    check(times, status)?;
    Ok(product_limit(&risk_table(None, times, |i| status[i] == 1)))
}

/// Kaplan–Meier with delayed entry: the risk set at `u` is `entry < u <= t`.
pub fn kaplan_meier_truncated(
    entry: &[f64],
    times: &[f64],
    status: &[u8],
) -> Result<StepFunction, EstimatorError> {
    check(times, status)?;
    if entry.len() != times.len() {
        return Err(EstimatorError::LengthMismatch(entry.len(), times.len()));
    }
    Ok(product_limit(&risk_table(Some(entry), times, |i| status[i] == 1)))
}

/// Kaplan–Meier of the censoring distribution (status flipped). Events tied
/// with a censoring remain in its risk set; weight consumers evaluate
/// `left_limit` at event times.
pub fn censoring_km(times: &[f64], status: &[u8]) -> Result<StepFunction, EstimatorError> {
    check(times, status)?;
    Ok(product_limit(&risk_table(None, times, |i| status[i] == 0)))
}

/// Nelson–Aalen cumulative hazard.
pub fn nelson_aalen(times: &[f64], status: &[u8]) -> Result<StepFunction, EstimatorError> {
    check(times, status)?;
    let table = risk_table(None, times, |i| status[i] == 1);
    let mut h = 0.0;
    let mut knots = Vec::with_capacity(table.len());
    let mut values = Vec::with_capacity(table.len());
    for (u, d, n) in table {
        h += d / n;
        knots.push(u);
        values.push(h);
    }
    Ok(StepFunction::new(knots, values, 0.0))
}

pub type Matrix = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for (k, bk) in b.iter().enumerate() {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += aik * bk[j];
            }
        }
    }
    out
}

/// Transition probability matrices `P(0, u)` at each event time `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrixPath {
    pub states: Vec<String>,
    pub knots: Vec<f64>,
    pub matrices: Vec<Matrix>,
}

impl TransitionMatrixPath {
    /// `P(0, tau)`; the identity before the first knot.
    pub fn at(&self, tau: f64) -> Matrix {
        let i = self.knots.partition_point(|&k| k <= tau);
        if i == 0 {
            identity(self.states.len())
        } else {
            self.matrices[i - 1].clone()
        }
    }

    /// `P_{from,to}(0, .)` as a step function.
    pub fn probability(&self, from: usize, to: usize) -> StepFunction {
        StepFunction::new(
            self.knots.clone(),
            self.matrices.iter().map(|m| m[from][to]).collect(),
            if from == to { 1.0 } else { 0.0 },
        )
    }
}

/// A transition record: at risk in `from` over `(entry, exit]`, moving to
/// `to` at `exit` when `event`.
struct Stay {
    from: usize,
    to: usize,
    entry: f64,
    exit: f64,
    event: bool,
}

/// Aalen–Johansen estimator of `P(0, tau)`.
///
/// Single-event tasks use states `{0, 1}`; competing-risks tasks use
/// `{0, cause_1, ..., cause_q}`, so `CIF_k` is `P_{0k}`.
pub fn aalen_johansen(task: &SurvivalTask) -> Result<TransitionMatrixPath, EstimatorError> {
    let (states, stays): (Vec<String>, Vec<Stay>) = match (&task.records, task.kind) {
        (Records::Subjects(r), kind) => {
            let mut states = vec!["0".to_string()];
            if kind == TaskKind::CompetingRisks {
                states.extend(task.cause_labels.iter().cloned());
            } else {
                states.push("1".into());
            }
            let stays = r
                .iter()
                .map(|x| Stay {
                    from: 0,
                    to: x.cause.unwrap_or(1),
                    entry: x.entry,
                    exit: x.time,
                    event: x.status == 1,
                })
                .collect();
            (states, stays)
        }
        (Records::StartStop(r), _) => {
            let graph = task.state_graph.as_ref().expect("multi-state tasks carry a graph");
            let stays = r
                .iter()
                .map(|x| Stay {
                    from: x.from,
                    to: x.to,
                    entry: x.entry,
                    exit: x.exit,
                    event: x.status == 1,
                })
                .collect();
            (graph.states.clone(), stays)
        }
    };
    if stays.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let s = states.len();

    // per-state sorted entry and exit times for O(log n) risk-set counts
    let mut entries = vec![Vec::new(); s];
    let mut exits = vec![Vec::new(); s];
    for st in &stays {
        entries[st.from].push(st.entry);
        exits[st.from].push(st.exit);
    }
    for v in entries.iter_mut().chain(exits.iter_mut()) {
        v.sort_by(f64::total_cmp);
    }
    let at_risk = |state: usize, u: f64| -> f64 {
        let entered = entries[state].partition_point(|&e| e < u);
        let left = exits[state].partition_point(|&e| e < u);
        (entered - left) as f64
    };

    let mut events: Vec<&Stay> = stays.iter().filter(|x| x.event).collect();
    events.sort_by(|a, b| a.exit.total_cmp(&b.exit));

    let mut p = identity(s);
    let mut knots = Vec::new();
    let mut matrices = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let u = events[i].exit;
        let mut counts = vec![vec![0.0; s]; s];
        while i < events.len() && events[i].exit == u {
            counts[events[i].from][events[i].to] += 1.0;
            i += 1;
        }
        let mut step = identity(s);
        for o in 0..s {
            let total: f64 = counts[o].iter().sum();
            if total == 0.0 {
                continue;
            }
            let n = at_risk(o, u);
            if n <= 0.0 {
                return Err(EstimatorError::NoneAtRisk {
                    state: states[o].clone(),
                    time: u,
                });
            }
            for l in 0..s {
                if l != o {
                    step[o][l] = counts[o][l] / n;
                }
            }
            step[o][o] = 1.0 - total / n;
        }
        p = matmul(&p, &step);
        knots.push(u);
        matrices.push(p.clone());
    }
    Ok(TransitionMatrixPath {
        states,
        knots,
        matrices,
    })
}

/// Aalen–Johansen cumulative incidence functions of a competing-risks task,
/// one per cause.
pub fn aalen_johansen_cif(task: &SurvivalTask) -> Result<Vec<StepFunction>, EstimatorError> {
    let path = aalen_johansen(task)?;
    Ok((1..path.states.len()).map(|k| path.probability(0, k)).collect())
}

//! Follow-up partitioning and long-format expansion.
//!
//! Intervals are left-open and right-closed: interval `j` (1-based) is
//! `(a_{j-1}, a_j]` with `a_0 = 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    format_number, FeatureKind, FeatureSchema, Records, StateGraph, SurvivalTask, TaskKind,
};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("number of intervals must be at least 1")]
    NoIntervals,
    #[error("interval width must be positive and finite, got {0}")]
    BadWidth(f64),
    #[error("cut points must be positive and strictly increasing")]
    BadCuts,
    #[error("cut grid ends at {last} but the data extend to {max}")]
    NotCovered { last: f64, max: f64 },
    #[error("task has no event times to place cuts at")]
    NoEvents,
    #[error("subject `{id}` has time {time} beyond the last cut {last}")]
    BeyondGrid { id: String, time: f64, last: f64 },
    #[error("expected a {expected} task, got {found}")]
    WrongKind { expected: TaskKind, found: TaskKind },
    #[error("record of subject `{0}` uses a transition absent from the state graph")]
    UnknownTransition(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How cut points are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CutStrategy {
    /// Event quantiles with `J = min(20, #unique event times)`.
    Default,
    /// `J` intervals of equal width spanning the maximum observed time.
    Equidistant { intervals: usize },
    /// Cuts at multiples of `width` until the maximum observed time is covered.
    Width { width: f64 },
    /// Type-1 empirical quantiles of event times at `p = j/J`.
    EventQuantiles { intervals: usize },
    AllEventTimes,
    Explicit { cuts: Vec<f64> },
}

/// Ordered cut points `a_1 < ... < a_J`; `a_0 = 0` is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutGrid {
    pub cuts: Vec<f64>,
    pub strategy: CutStrategy,
    /// Set when fewer intervals than requested could be placed.
    pub truncated: bool,
}

impl CutGrid {
    pub fn explicit(cuts: Vec<f64>) -> Result<Self, PartitionError> {
        check_cuts(&cuts)?;
        Ok(CutGrid {
            strategy: CutStrategy::Explicit { cuts: cuts.clone() },
            cuts,
            truncated: false,
        })
    }

    /// Number of intervals `J`.
    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// `a_{j-1}` for 1-based `j`.
    pub fn lower(&self, j: usize) -> f64 {
        if j <= 1 {
            0.0
        } else {
            self.cuts[j - 2]
        }
    }

    /// `a_j` for 1-based `j`.
    pub fn upper(&self, j: usize) -> f64 {
        self.cuts[j - 1]
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper(j) - self.lower(j)
    }

    pub fn last(&self) -> f64 {
        *self.cuts.last().expect("grid has at least one cut")
    }

    /// 1-based index of the interval containing `t`, or `None` beyond `a_J`.
    /// Times at or below zero map to the first interval.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        let j = self.cuts.partition_point(|&a| a < t);
        (j < self.cuts.len()).then_some(j + 1)
    }
}

fn check_cuts(cuts: &[f64]) -> Result<(), PartitionError> {
    if cuts.is_empty() {
        return Err(PartitionError::NoIntervals);
    }
    let ok = cuts.iter().all(|c| c.is_finite() && *c > 0.0) && cuts.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(PartitionError::BadCuts)
    }
}

fn unique_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Type-1 empirical quantile of sorted data.
pub(crate) fn quantile_type1(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 * p).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Builds a cut grid for `task`. When an event-based strategy leaves the
/// largest observed time uncovered, that time is appended as a final cut.
pub fn make_cuts(task: &SurvivalTask, strategy: &CutStrategy) -> Result<CutGrid, PartitionError> {
    let max_time = task.max_time();
    let mut events = task.event_times();
    events.sort_by(f64::total_cmp);
    let unique = unique_sorted(events.clone());

    let quantile_cuts = |j: usize| -> Result<(Vec<f64>, bool), PartitionError> {
        if j == 0 {
            return Err(PartitionError::NoIntervals);
        }
        if events.is_empty() {
            return Err(PartitionError::NoEvents);
        }
        let cuts = unique_sorted(
            (1..=j)
                .map(|k| quantile_type1(&events, k as f64 / j as f64))
                .collect(),
        );
        let short = cuts.len() < j;
        Ok((cuts, short))
    };

    let (mut cuts, truncated) = match strategy {
        CutStrategy::Default => {
            let (c, _) = quantile_cuts(unique.len().clamp(1, 20))?;
            (c, false)
        }
        CutStrategy::EventQuantiles { intervals } => quantile_cuts(*intervals)?,
        CutStrategy::AllEventTimes => {
            if unique.is_empty() {
                return Err(PartitionError::NoEvents);
            }
            (unique, false)
        }
        CutStrategy::Equidistant { intervals } => {
            if *intervals == 0 {
                return Err(PartitionError::NoIntervals);
            }
            let j = *intervals;
            let mut c: Vec<f64> = (1..=j).map(|k| k as f64 * max_time / j as f64).collect();
            c[j - 1] = max_time;
            (c, false)
        }
        CutStrategy::Width { width } => {
            if !(width.is_finite() && *width > 0.0) {
                return Err(PartitionError::BadWidth(*width));
            }
            let mut c = Vec::new();
            let mut k = 1usize;
            loop {
                let a = k as f64 * width;
                c.push(a);
                if a >= max_time {
                    break;
                }
                k += 1;
            }
            (c, false)
        }
        CutStrategy::Explicit { cuts } => {
            check_cuts(cuts)?;
            let last = *cuts.last().unwrap();
            if last < max_time {
                return Err(PartitionError::NotCovered {
                    last,
                    max: max_time,
                });
            }
            (cuts.clone(), false)
        }
    };
    if *cuts.last().unwrap() < max_time {
        cuts.push(max_time);
    }
    check_cuts(&cuts)?;
    Ok(CutGrid {
        cuts,
        strategy: strategy.clone(),
        truncated,
    })
}

/// What to do with a censored subject's last, partially observed interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensoringRule {
    /// Keep the partial interval with its shortened exposure.
    #[default]
    KeepPartial,
    /// Drop it: a censored subject counts only in intervals it survived
    /// completely. Used by discrete-time models.
    DropPartial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub episode: u32,
    /// Index into the state graph's edge list.
    pub edge: usize,
}

/// One row per subject, interval and (for competing risks or multi-state
/// data) cause or transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub id: String,
    /// 1-based interval index.
    pub j: usize,
    /// Start of the at-risk window within the interval.
    pub tstart: f64,
    /// End of the at-risk window within the interval.
    pub tend: f64,
    pub d: u8,
    /// Time at risk.
    pub t: f64,
    /// `ln(t)`.
    pub offset: f64,
    /// Interval end point `a_j`.
    pub a_end: f64,
    pub cause: Option<usize>,
    pub transition: Option<Transition>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongData {
    pub rows: Vec<LongRow>,
    pub grid: CutGrid,
    pub kind: TaskKind,
    /// 1 for single-event data.
    pub cause_count: usize,
    pub cause_labels: Vec<String>,
    pub state_graph: Option<StateGraph>,
    pub schema: FeatureSchema,
}

/// Rows for one at-risk window `(entry, exit]`.
#[allow(clippy::too_many_arguments)]
fn expand_window(
    out: &mut Vec<LongRow>,
    id: &str,
    entry: f64,
    exit: f64,
    event: bool,
    drop_partial: bool,
    grid: &CutGrid,
    cause: Option<usize>,
    transition: Option<Transition>,
    features: &[f64],
) -> Result<(), PartitionError> {
    let last = grid.interval_of(exit).ok_or_else(|| PartitionError::BeyondGrid {
        id: id.to_string(),
        time: exit,
        last: grid.last(),
    })?;
    let first = grid.cuts.partition_point(|&a| a <= entry) + 1;
    for j in first..=last {
        let lo = grid.lower(j);
        let hi = grid.upper(j);
        let final_row = j == last;
        if final_row && !event && drop_partial && exit < hi {
            break;
        }
        let tstart = lo.max(entry);
        let tend = if final_row { exit } else { hi };
        let t = if final_row || entry > lo {
            tend - tstart
        } else {
            hi - lo
        };
        out.push(LongRow {
            id: id.to_string(),
            j,
            tstart,
            tend,
            d: u8::from(final_row && event),
            t,
            offset: t.ln(),
            a_end: hi,
            cause,
            transition: transition.clone(),
            features: features.to_vec(),
        });
    }
    Ok(())
}

fn expect_kind(task: &SurvivalTask, kind: TaskKind) -> Result<(), PartitionError> {
    if task.kind == kind {
        Ok(())
    } else {
        Err(PartitionError::WrongKind {
            expected: kind,
            found: task.kind,
        })
    }
}

fn long_data(task: &SurvivalTask, grid: &CutGrid, rows: Vec<LongRow>) -> LongData {
    LongData {
        rows,
        grid: grid.clone(),
        kind: task.kind,
        cause_count: task.cause_count(),
        cause_labels: task.cause_labels.clone(),
        state_graph: task.state_graph.clone(),
        schema: task.schema.clone(),
    }
}

/// Single-event expansion.
pub fn expand_single_event(
    task: &SurvivalTask,
    grid: &CutGrid,
    rule: CensoringRule,
) -> Result<LongData, PartitionError> {
    expect_kind(task, TaskKind::SingleEvent)?;
    let records = task.subjects().expect("single-event tasks hold subject records");
    let mut rows = Vec::new();
    for r in records {
        expand_window(
            &mut rows,
            &r.id,
            r.entry,
            r.time,
            r.status == 1,
            rule == CensoringRule::DropPartial,
            grid,
            None,
            None,
            &r.features,
        )?;
    }
    Ok(long_data(task, grid, rows))
}

/// Stacked cause-specific expansion: every subject appears once per cause
/// and is treated as censored in the copies of the causes it did not
/// experience.
pub fn expand_competing_risks(
    task: &SurvivalTask,
    grid: &CutGrid,
    rule: CensoringRule,
) -> Result<LongData, PartitionError> {
    expect_kind(task, TaskKind::CompetingRisks)?;
    let records = task.subjects().expect("competing-risks tasks hold subject records");
    let q = task.cause_count();
    let mut rows = Vec::new();
    for r in records {
        for k in 1..=q {
            expand_window(
                &mut rows,
                &r.id,
                r.entry,
                r.time,
                r.status == 1 && r.cause == Some(k),
                rule == CensoringRule::DropPartial && r.status == 0,
                grid,
                Some(k),
                None,
                &r.features,
            )?;
        }
    }
    Ok(long_data(task, grid, rows))
}

/// Multi-state expansion: each stay is expanded once for the observed
/// transition and once for every competing transition out of the same
/// state, the latter with all event indicators zero.
pub fn expand_multistate(
    task: &SurvivalTask,
    grid: &CutGrid,
    rule: CensoringRule,
) -> Result<LongData, PartitionError> {
    expect_kind(task, TaskKind::MultiState)?;
    let records = task.start_stop().expect("multi-state tasks hold start-stop records");
    let graph = task.state_graph.as_ref().expect("multi-state tasks carry a state graph");
    let mut rows = Vec::new();
    for r in records {
        if graph.edge_index(r.from, r.to).is_none() {
            return Err(PartitionError::UnknownTransition(r.id.clone()));
        }
        for edge in graph.edges_from(r.from) {
            let (from, to) = graph.edges[edge];
            expand_window(
                &mut rows,
                &r.id,
                r.entry,
                r.exit,
                r.status == 1 && to == r.to,
                rule == CensoringRule::DropPartial && r.status == 0,
                grid,
                None,
                Some(Transition {
                    from,
                    to,
                    episode: r.episode,
                    edge,
                }),
                &r.features,
            )?;
        }
    }
    Ok(long_data(task, grid, rows))
}

/// Dispatches on the task kind.
pub fn expand(
    task: &SurvivalTask,
    grid: &CutGrid,
    rule: CensoringRule,
) -> Result<LongData, PartitionError> {
    match &task.records {
        Records::Subjects(_) if task.kind == TaskKind::CompetingRisks => {
            expand_competing_risks(task, grid, rule)
        }
        Records::Subjects(_) => expand_single_event(task, grid, rule),
        Records::StartStop(_) => expand_multistate(task, grid, rule),
    }
}

/// Writes long data as CSV:
/// `id,j,tstart,tend,d,t,offset[,cause][,from,to,episode],<features...>`.
pub fn write_long_csv<W: Write>(data: &LongData, writer: W) -> Result<(), PartitionError> {
    let mut w = csv::Writer::from_writer(writer);
    let with_cause = data.kind == TaskKind::CompetingRisks;
    let with_transition = data.kind == TaskKind::MultiState;
    let mut header: Vec<String> = ["id", "j", "tstart", "tend", "d", "t", "offset"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_cause {
        header.push("cause".into());
    }
    if with_transition {
        header.extend(["from".to_string(), "to".into(), "episode".into()]);
    }
    header.extend(data.schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for r in &data.rows {
        let mut row = vec![
            r.id.clone(),
            r.j.to_string(),
            format_number(r.tstart),
            format_number(r.tend),
            r.d.to_string(),
            format_number(r.t),
            format_number(r.offset),
        ];
        if with_cause {
            let k = r.cause.unwrap_or(1);
            row.push(
                data.cause_labels
                    .get(k - 1)
                    .cloned()
                    .unwrap_or_else(|| k.to_string()),
            );
        }
        if with_transition {
            let tr = r.transition.as_ref().expect("multi-state rows carry a transition");
            let g = data.state_graph.as_ref().expect("multi-state data carry a graph");
            row.push(g.states[tr.from].clone());
            row.push(g.states[tr.to].clone());
            row.push(tr.episode.to_string());
        }
        for (c, &v) in r.features.iter().enumerate() {
            row.push(match &data.schema.columns[c].kind {
                FeatureKind::Numeric => format_number(v),
                FeatureKind::Categorical { levels } => levels[v as usize].clone(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FormatSpec, SubjectRecord};

    fn tumor_task(entries: [f64; 3]) -> SurvivalTask {
        let times = [1.3, 0.5, 2.1];
        let status = [1, 0, 1];
        let ages = [31.0, 67.0, 42.0];
        let records = (0..3)
            .map(|i| SubjectRecord {
                id: (i + 1).to_string(),
                entry: entries[i],
                time: times[i],
                status: status[i],
                cause: None,
                features: vec![ages[i]],
            })
            .collect();
        SurvivalTask::new(
            TaskKind::SingleEvent,
            Records::Subjects(records),
            None,
            FeatureSchema::numeric(&["age"]),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn width_grid_covers_example() {
        let g = make_cuts(&tumor_task([0.0; 3]), &CutStrategy::Width { width: 0.5 }).unwrap();
        assert_eq!(g.cuts, vec![0.5, 1.0, 1.5, 2.0, 2.5]);
    }

    #[test]
    fn singleton_all_event_grid() {
        let t = SurvivalTask::from_times(&[1.0], &[1]).unwrap();
        let g = make_cuts(&t, &CutStrategy::AllEventTimes).unwrap();
        assert_eq!(g.cuts, vec![1.0]);
    }

    #[test]
    fn event_quantiles_median_and_max() {
        let t = SurvivalTask::from_times(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1]).unwrap();
        let g = make_cuts(&t, &CutStrategy::EventQuantiles { intervals: 2 }).unwrap();
        assert_eq!(g.cuts, vec![2.0, 4.0]);
        assert!(!g.truncated);
        let g = make_cuts(&t, &CutStrategy::EventQuantiles { intervals: 9 }).unwrap();
        assert_eq!(g.cuts, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(g.truncated);
    }

    #[test]
    fn censored_tail_gets_final_cut() {
        let t = SurvivalTask::from_times(&[1.0, 2.0, 5.0], &[1, 1, 0]).unwrap();
        let g = make_cuts(&t, &CutStrategy::AllEventTimes).unwrap();
        assert_eq!(g.cuts, vec![1.0, 2.0, 5.0]);
        let g = make_cuts(&t, &CutStrategy::Default).unwrap();
        assert_eq!(g.cuts, vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn explicit_grid_must_cover() {
        let t = SurvivalTask::from_times(&[1.0, 2.0], &[1, 1]).unwrap();
        assert!(matches!(
            make_cuts(&t, &CutStrategy::Explicit { cuts: vec![1.0] }),
            Err(PartitionError::NotCovered { .. })
        ));
        assert!(make_cuts(&t, &CutStrategy::Explicit { cuts: vec![2.0, 1.0] }).is_err());
    }

    #[test]
    fn interval_lookup_is_right_closed() {
        let g = CutGrid::explicit(vec![0.5, 1.0, 1.5]).unwrap();
        assert_eq!(g.interval_of(0.5), Some(1));
        assert_eq!(g.interval_of(0.50001), Some(2));
        assert_eq!(g.interval_of(1.5), Some(3));
        assert_eq!(g.interval_of(1.6), None);
        assert_eq!(g.interval_of(0.0), Some(1));
    }

    #[test]
    fn expansion_of_three_subjects() {
        let task = tumor_task([0.0; 3]);
        let g = make_cuts(&task, &CutStrategy::Width { width: 0.5 }).unwrap();
        let long = expand_single_event(&task, &g, CensoringRule::KeepPartial).unwrap();
        let got: Vec<(&str, usize, u8)> =
            long.rows.iter().map(|r| (r.id.as_str(), r.j, r.d)).collect();
        assert_eq!(
            got,
            vec![
                ("1", 1, 0),
                ("1", 2, 0),
                ("1", 3, 1),
                ("2", 1, 0),
                ("3", 1, 0),
                ("3", 2, 0),
                ("3", 3, 0),
                ("3", 4, 0),
                ("3", 5, 1)
            ]
        );
        assert!((long.rows[2].t - 0.3).abs() < 1e-12);
        assert!((long.rows[8].t - 0.1).abs() < 1e-12);
        assert_eq!(long.rows[8].offset, long.rows[8].t.ln());
        assert_eq!(long.rows[4].features, vec![42.0]);
    }

    #[test]
    fn partial_left_truncation_shortens_exposure() {
        let task = tumor_task([0.7, 0.0, 0.0]);
        let g = CutGrid::explicit(vec![0.5, 1.0, 1.5, 2.0, 2.5]).unwrap();
        let long = expand_single_event(&task, &g, CensoringRule::KeepPartial).unwrap();
        let s1: Vec<_> = long.rows.iter().filter(|r| r.id == "1").collect();
        assert_eq!(s1.len(), 2);
        assert!((s1[0].t - 0.3).abs() < 1e-12);
        assert_eq!(s1[0].tstart, 0.7);
        let total: f64 = s1.iter().map(|r| r.t).sum();
        assert!((total - 0.6).abs() < 1e-12);
    }

    #[test]
    fn drop_partial_removes_censored_tail_only() {
        let task = tumor_task([0.0; 3]);
        let g = CutGrid::explicit(vec![0.4, 1.0, 1.5, 2.0, 2.5]).unwrap();
        let long = expand_single_event(&task, &g, CensoringRule::DropPartial).unwrap();
        let s2: Vec<_> = long.rows.iter().filter(|r| r.id == "2").collect();
        assert_eq!(s2.len(), 1);
        assert_eq!(s2[0].j, 1);
        assert_eq!(long.rows.iter().filter(|r| r.id == "1").count(), 3);
    }

    #[test]
    fn beyond_grid_rejected() {
        let task = tumor_task([0.0; 3]);
        let g = CutGrid::explicit(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            expand_single_event(&task, &g, CensoringRule::KeepPartial),
            Err(PartitionError::BeyondGrid { .. })
        ));
    }

    #[test]
    fn competing_copies_mark_only_observed_cause() {
        let task = SurvivalTask::competing_from(&[4.0, 22.0, 3.0], &[1, 1, 0], &[1, 2, 0], 2).unwrap();
        let g = make_cuts(&task, &CutStrategy::Width { width: 2.0 }).unwrap();
        let long = expand_competing_risks(&task, &g, CensoringRule::KeepPartial).unwrap();
        let single_rows: usize = [2usize, 11, 2].iter().sum();
        assert_eq!(long.rows.len(), 2 * single_rows);
        let last = |id: &str, k: usize| {
            long.rows
                .iter()
                .rfind(|r| r.id == id && r.cause == Some(k))
                .unwrap()
                .clone()
        };
        assert_eq!((last("1", 1).j, last("1", 1).d), (2, 1));
        assert_eq!((last("1", 2).j, last("1", 2).d), (2, 0));
        assert_eq!(last("2", 1).d, 0);
        assert_eq!((last("2", 2).j, last("2", 2).d), (11, 1));
        assert_eq!(long.rows.iter().map(|r| r.d as usize).sum::<usize>(), 2);
    }

    fn sir_task() -> SurvivalTask {
        let src = "id,from,to,episode,tstart,tstop,status\n\
                   1,1,2,1,0,0.5,1\n\
                   1,2,1,1,0.5,1,1\n\
                   1,1,2,2,1,3,1\n\
                   3,1,2,1,0,1,1\n\
                   3,2,3,1,1,2.5,1\n";
        let spec = FormatSpec::new(TaskKind::MultiState).with_edges(&[("1", "2"), ("2", "1"), ("2", "3")]);
        crate::data::read_csv(src.as_bytes(), &spec).unwrap()
    }

    #[test]
    fn multistate_counterfactual_rows() {
        let task = sir_task();
        let g = CutGrid::explicit(vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]).unwrap();
        let long = expand_multistate(&task, &g, CensoringRule::KeepPartial).unwrap();
        let graph = task.state_graph.as_ref().unwrap();
        let rows3: Vec<_> = long.rows.iter().filter(|r| r.id == "3").collect();
        let label = |r: &LongRow| graph.edge_label(r.transition.as_ref().unwrap().edge);
        // stay in state 1: only 1->2 leaves state 1
        let first: Vec<_> = rows3.iter().filter(|r| label(r) == "1->2").collect();
        assert_eq!(first.len(), 2);
        assert_eq!(first[1].d, 1);
        assert_eq!(first[1].j, 2);
        // stay in state 2 over (1, 2.5]: observed 2->3 and counterfactual 2->1
        let to3: Vec<_> = rows3.iter().filter(|r| label(r) == "2->3").collect();
        let to1: Vec<_> = rows3.iter().filter(|r| label(r) == "2->1").collect();
        assert_eq!(to3.len(), 3);
        assert_eq!(to1.len(), 3);
        assert_eq!(to3.iter().map(|r| r.d).collect::<Vec<_>>(), vec![0, 0, 1]);
        assert!(to1.iter().all(|r| r.d == 0));
        for (a, b) in to3.iter().zip(&to1) {
            assert_eq!((a.j, a.t), (b.j, b.t));
        }
    }

    #[test]
    fn one_edge_graph_matches_single_event() {
        let src = "id,from,to,episode,tstart,tstop,status\na,s,d,1,0.2,1.3,1\nb,s,d,1,0,0.5,0\n";
        let ms = crate::data::read_csv(src.as_bytes(), &FormatSpec::new(TaskKind::MultiState)).unwrap();
        let se = SurvivalTask::new(
            TaskKind::SingleEvent,
            Records::Subjects(vec![
                SubjectRecord {
                    id: "a".into(),
                    entry: 0.2,
                    time: 1.3,
                    status: 1,
                    cause: None,
                    features: vec![],
                },
                SubjectRecord {
                    id: "b".into(),
                    entry: 0.0,
                    time: 0.5,
                    status: 0,
                    cause: None,
                    features: vec![],
                },
            ]),
            None,
            FeatureSchema::default(),
            vec![],
        )
        .unwrap();
        let g = CutGrid::explicit(vec![0.5, 1.0, 1.5]).unwrap();
        let a = expand_multistate(&ms, &g, CensoringRule::KeepPartial).unwrap();
        let b = expand_single_event(&se, &g, CensoringRule::KeepPartial).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!((x.j, x.d, x.t, x.offset), (y.j, y.d, y.t, y.offset));
            assert_eq!(x.transition.as_ref().unwrap().edge, 0);
        }
    }

    #[test]
    fn long_csv_header_and_rows() {
        let task = tumor_task([0.0; 3]);
        let g = make_cuts(&task, &CutStrategy::Width { width: 0.5 }).unwrap();
        let long = expand_single_event(&task, &g, CensoringRule::KeepPartial).unwrap();
        let mut buf = Vec::new();
        write_long_csv(&long, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "id,j,tstart,tend,d,t,offset,age");
        assert_eq!(lines.next().unwrap(), "1,1,0,0.5,0,0.5,-0.69314718056,31");
        assert_eq!(text.lines().count(), 10);
    }
}

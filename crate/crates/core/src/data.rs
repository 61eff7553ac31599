//! Survival data model: subject-level and start-stop records, task
//! validation, and CSV ingestion/export.
//!
//! Two CSV layouts are supported. The standard layout holds one row per
//! subject (`id,time,status[,cause][,entry],<features...>`); the start-stop
//! layout holds one row per stay in a state
//! (`id,from,to,episode,tstart,tstop,status,<features...>`). Categorical
//! features are level-encoded in first-appearance order and the dictionary is
//! kept on the task's [`FeatureSchema`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while loading, constructing or aligning survival data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid task: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("feature `{0}` is missing from the prediction data")]
    MissingFeature(String),
    #[error("feature `{name}` is {expected} in the training schema but {found} in the prediction data")]
    FeatureTypeMismatch {
        name: String,
        expected: &'static str,
        found: &'static str,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Kind of survival task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    SingleEvent,
    CompetingRisks,
    MultiState,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::SingleEvent => "single-event",
            TaskKind::CompetingRisks => "competing-risks",
            TaskKind::MultiState => "multi-state",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    /// Level labels; a value is stored as the index of its label.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered feature columns shared by every record of a task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<FeatureColumn>,
}

impl FeatureSchema {
    pub fn numeric<S: AsRef<str>>(names: &[S]) -> Self {
        FeatureSchema {
            columns: names
                .iter()
                .map(|n| FeatureColumn {
                    name: n.as_ref().to_string(),
                    kind: FeatureKind::Numeric,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Re-encodes a feature row written against `source` into this schema.
    ///
    /// Columns are matched by name. Categorical labels unknown to this schema
    /// map to the reference (first) level; the second return value counts
    /// how many values were remapped that way.
    pub fn align_row(
        &self,
        source: &FeatureSchema,
        row: &[f64],
    ) -> Result<(Vec<f64>, usize), DataError> {
        let mut out = Vec::with_capacity(self.columns.len());
        let mut unknown = 0;
        for col in &self.columns {
            let idx = source
                .index_of(&col.name)
                .ok_or_else(|| DataError::MissingFeature(col.name.clone()))?;
            let value = row[idx];
            match (&col.kind, &source.columns[idx].kind) {
                (FeatureKind::Numeric, FeatureKind::Numeric) => out.push(value),
                (FeatureKind::Numeric, FeatureKind::Categorical { .. }) => {
                    return Err(DataError::FeatureTypeMismatch {
                        name: col.name.clone(),
                        expected: "numeric",
                        found: "categorical",
                    })
                }
                (FeatureKind::Categorical { levels }, source_kind) => {
                    let label = match source_kind {
                        FeatureKind::Categorical { levels: src } => src[value as usize].clone(),
                        FeatureKind::Numeric => format_number(value),
                    };
                    match levels.iter().position(|l| *l == label) {
                        Some(code) => out.push(code as f64),
                        None => {
                            unknown += 1;
                            out.push(0.0);
                        }
                    }
                }
            }
        }
        Ok((out, unknown))
    }
}

/// One subject in the standard layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// Left-truncation time.
    pub entry: f64,
    pub time: f64,
    pub status: u8,
    /// Cause index in `1..=q`, competing risks only.
    pub cause: Option<usize>,
    pub features: Vec<f64>,
}

/// One stay in a state, start-stop layout. `from`/`to` index into
/// [`StateGraph::states`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartStopRecord {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub episode: u32,
    pub entry: f64,
    pub exit: f64,
    pub status: u8,
    pub features: Vec<f64>,
}

/// Directed graph of admissible transitions. Back-transitions are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGraph {
    pub states: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl StateGraph {
    pub fn from_labels<S: AsRef<str>>(edges: &[(S, S)]) -> Self {
        let mut states: Vec<String> = Vec::new();
        let idx = |s: &str, states: &mut Vec<String>| match states.iter().position(|x| x == s)
        {
            Some(i) => i,
            None => {
                states.push(s.to_string());
                states.len() - 1
            }
        };
        let mut out = Vec::new();
        for (a, b) in edges {
            let i = idx(a.as_ref(), &mut states);
            let j = idx(b.as_ref(), &mut states);
            if !out.contains(&(i, j)) {
                out.push((i, j));
            }
        }
        StateGraph { states, edges: out }
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == (from, to))
    }

    /// Edge indices leaving `state`, in declaration order.
    pub fn edges_from(&self, state: usize) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.0 == state)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn edge_label(&self, edge: usize) -> String {
        let (a, b) = self.edges[edge];
        format!("{}->{}", self.states[a], self.states[b])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Records {
    Subjects(Vec<SubjectRecord>),
    StartStop(Vec<StartStopRecord>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Subjects(r) => r.len(),
            Records::StartStop(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated survival task. Tasks are immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTask {
    pub kind: TaskKind,
    pub records: Records,
    pub state_graph: Option<StateGraph>,
    pub schema: FeatureSchema,
    /// Cause labels; cause `k` is `cause_labels[k - 1]`.
    pub cause_labels: Vec<String>,
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Zero-based record index, when the violation concerns one record.
    pub record: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(r) => write!(f, "record {}: {}", r + 1, self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn violation(record: Option<usize>, message: impl Into<String>) -> Violation {
    Violation {
        record,
        message: message.into(),
    }
}

/// Returns every invariant violation of `task`; empty iff the task is valid.
pub fn validate(task: &SurvivalTask) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = task.schema.len();
    let check_features = |i: usize, features: &[f64], out: &mut Vec<Violation>| {
        if features.len() != p {
            out.push(violation(
                Some(i),
                format!("expected {} feature values, found {}", p, features.len()),
            ));
            return;
        }
        for (col, &v) in task.schema.columns.iter().zip(features) {
            match &col.kind {
                FeatureKind::Numeric if !v.is_finite() => out.push(violation(
                    Some(i),
                    format!("feature `{}` is not finite", col.name),
                )),
                FeatureKind::Categorical { levels }
                    if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < levels.len()) =>
                {
                    out.push(violation(
                        Some(i),
                        format!("feature `{}` has an invalid level code {}", col.name, v),
                    ))
                }
                _ => {}
            }
        }
    };

    let mut any_event = false;
    match &task.records {
        Records::Subjects(records) => {
            if task.kind == TaskKind::MultiState {
                out.push(violation(None, "multi-state tasks require start-stop records"));
            }
            let q = task.cause_labels.len();
            if task.kind == TaskKind::CompetingRisks && q < 2 {
                out.push(violation(None, "q ≥ 2 causes required"));
            }
            let mut seen = HashSet::new();
            for (i, r) in records.iter().enumerate() {
                if r.id.is_empty() {
                    out.push(violation(Some(i), "empty subject id"));
                }
                if !seen.insert(r.id.as_str()) {
                    out.push(violation(Some(i), format!("duplicate subject id `{}`", r.id)));
                }
                if !r.time.is_finite() || !r.entry.is_finite() {
                    out.push(violation(Some(i), "times must be finite"));
                } else {
                    if r.entry < 0.0 {
                        out.push(violation(Some(i), "entry must be non-negative"));
                    }
                    if r.time <= r.entry {
                        out.push(violation(Some(i), "time must exceed entry"));
                    }
                }
                if r.status > 1 {
                    out.push(violation(Some(i), "status must be 0 or 1"));
                }
                any_event |= r.status == 1;
                match task.kind {
                    TaskKind::SingleEvent if r.cause.is_some() => {
                        out.push(violation(Some(i), "single-event records carry no cause"))
                    }
                    TaskKind::CompetingRisks => match r.cause {
                        Some(_) if r.status != 1 => {
                            out.push(violation(Some(i), "cause given for a censored record"))
                        }
                        Some(k) if k == 0 || k > q => {
                            out.push(violation(Some(i), format!("cause {} outside 1..={}", k, q)))
                        }
                        None if r.status == 1 => {
                            out.push(violation(Some(i), "event record without a cause"))
                        }
                        _ => {}
                    },
                    _ => {}
                }
                check_features(i, &r.features, &mut out);
            }
        }
        Records::StartStop(records) => {
            if task.kind != TaskKind::MultiState {
                out.push(violation(None, "start-stop records require a multi-state task"));
            }
            let Some(graph) = &task.state_graph else {
                out.push(violation(None, "multi-state task without a state graph"));
                return out;
            };
            // (id, from, to) -> [(entry, exit, record)]
            type Windows<'a> = HashMap<(&'a str, usize, usize), Vec<(f64, f64, usize)>>;
            let mut windows: Windows = HashMap::new();
            for (i, r) in records.iter().enumerate() {
                if r.id.is_empty() {
                    out.push(violation(Some(i), "empty subject id"));
                }
                if !r.entry.is_finite() || !r.exit.is_finite() {
                    out.push(violation(Some(i), "times must be finite"));
                } else {
                    if r.entry < 0.0 {
                        out.push(violation(Some(i), "entry must be non-negative"));
                    }
                    if r.exit <= r.entry {
                        out.push(violation(Some(i), "exit must exceed entry"));
                    }
                }
                if r.status > 1 {
                    out.push(violation(Some(i), "status must be 0 or 1"));
                }
                if r.episode == 0 {
                    out.push(violation(Some(i), "episode must be at least 1"));
                }
                any_event |= r.status == 1;
                if r.from >= graph.states.len() || r.to >= graph.states.len() {
                    out.push(violation(Some(i), "state index out of range"));
                } else if graph.edge_index(r.from, r.to).is_none() {
                    out.push(violation(
                        Some(i),
                        format!(
                            "transition {} -> {} is not an edge of the state graph",
                            graph.states[r.from], graph.states[r.to]
                        ),
                    ));
                }
                windows
                    .entry((r.id.as_str(), r.from, r.to))
                    .or_default()
                    .push((r.entry, r.exit, i));
                check_features(i, &r.features, &mut out);
            }
            let mut keys: Vec<_> = windows.keys().cloned().collect();
            keys.sort();
            for key in keys {
                let w = windows.get_mut(&key).unwrap();
                w.sort_by(|a, b| a.0.total_cmp(&b.0));
                for pair in w.windows(2) {
                    if pair[1].0 < pair[0].1 {
                        out.push(violation(
                            Some(pair[1].2),
                            "overlapping episodes for the same transition",
                        ));
                    }
                }
            }
        }
    }
    if !any_event {
        out.push(violation(None, "at least one record with status 1 is required"));
    }
    out
}

impl SurvivalTask {
    /// Builds a task and validates it.
    pub fn new(
        kind: TaskKind,
        records: Records,
        state_graph: Option<StateGraph>,
        schema: FeatureSchema,
        cause_labels: Vec<String>,
    ) -> Result<Self, DataError> {
        let task = SurvivalTask {
            kind,
            records,
            state_graph,
            schema,
            cause_labels,
        };
        let v = validate(&task);
        if v.is_empty() {
            Ok(task)
        } else {
            Err(DataError::Invalid(v))
        }
    }

    /// Single-event task without features; ids are `1..=n`.
    pub fn from_times(times: &[f64], status: &[u8]) -> Result<Self, DataError> {
        Self::with_features(times, status, &[] as &[&str], &vec![vec![]; times.len()])
    }

    /// Single-event task with numeric features.
    pub fn with_features<S: AsRef<str>>(
        times: &[f64],
        status: &[u8],
        names: &[S],
        features: &[Vec<f64>],
    ) -> Result<Self, DataError> {
        let records = times
            .iter()
            .zip(status)
            .zip(features)
            .enumerate()
            .map(|(i, ((&t, &d), x))| SubjectRecord {
                id: (i + 1).to_string(),
                entry: 0.0,
                time: t,
                status: d,
                cause: None,
                features: x.clone(),
            })
            .collect();
        Self::new(
            TaskKind::SingleEvent,
            Records::Subjects(records),
            None,
            FeatureSchema::numeric(names),
            vec![],
        )
    }

    /// Competing-risks task without features; `cause[i]` is ignored when
    /// `status[i] == 0`. Causes are labelled `"1"..="q"`.
    pub fn competing_from(
        times: &[f64],
        status: &[u8],
        cause: &[usize],
        q: usize,
    ) -> Result<Self, DataError> {
        let records = (0..times.len())
            .map(|i| SubjectRecord {
                id: (i + 1).to_string(),
                entry: 0.0,
                time: times[i],
                status: status[i],
                cause: (status[i] == 1).then_some(cause[i]),
                features: vec![],
            })
            .collect();
        Self::new(
            TaskKind::CompetingRisks,
            Records::Subjects(records),
            None,
            FeatureSchema::default(),
            (1..=q).map(|k| k.to_string()).collect(),
        )
    }

    pub fn subjects(&self) -> Option<&[SubjectRecord]> {
        match &self.records {
            Records::Subjects(r) => Some(r),
            Records::StartStop(_) => None,
        }
    }

    pub fn start_stop(&self) -> Option<&[StartStopRecord]> {
        match &self.records {
            Records::StartStop(r) => Some(r),
            Records::Subjects(_) => None,
        }
    }

    /// Number of causes: 1 for single-event tasks.
    pub fn cause_count(&self) -> usize {
        match self.kind {
            TaskKind::CompetingRisks => self.cause_labels.len(),
            _ => 1,
        }
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let ids: Vec<&str> = match &self.records {
            Records::Subjects(r) => r.iter().map(|x| x.id.as_str()).collect(),
            Records::StartStop(r) => r.iter().map(|x| x.id.as_str()).collect(),
        };
        ids.into_iter()
            .filter(|id| seen.insert(*id))
            .map(str::to_string)
            .collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids().len()
    }

    /// `(id, features)` for every subject, taking the first record of each.
    pub fn subject_features(&self) -> Vec<(String, Vec<f64>)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut push = |id: &str, f: &[f64]| {
            if seen.insert(id.to_string()) {
                out.push((id.to_string(), f.to_vec()));
            }
        };
        match &self.records {
            Records::Subjects(r) => r.iter().for_each(|x| push(&x.id, &x.features)),
            Records::StartStop(r) => r.iter().for_each(|x| push(&x.id, &x.features)),
        }
        out
    }

    /// Observed times and all-cause status of a subject-level task.
    pub fn times_status(&self) -> Option<(Vec<f64>, Vec<u8>)> {
        self.subjects().map(|r| {
            (
                r.iter().map(|x| x.time).collect(),
                r.iter().map(|x| x.status).collect(),
            )
        })
    }

    pub fn max_time(&self) -> f64 {
        match &self.records {
            Records::Subjects(r) => r.iter().map(|x| x.time).fold(0.0, f64::max),
            Records::StartStop(r) => r.iter().map(|x| x.exit).fold(0.0, f64::max),
        }
    }

    /// Times of observed events (any cause or transition), with repeats.
    pub fn event_times(&self) -> Vec<f64> {
        match &self.records {
            Records::Subjects(r) => r.iter().filter(|x| x.status == 1).map(|x| x.time).collect(),
            Records::StartStop(r) => r.iter().filter(|x| x.status == 1).map(|x| x.exit).collect(),
        }
    }

    pub fn has_left_truncation(&self) -> bool {
        match &self.records {
            Records::Subjects(r) => r.iter().any(|x| x.entry > 0.0),
            Records::StartStop(r) => {
                let mut first: HashMap<&str, f64> = HashMap::new();
                for x in r {
                    let e = first.entry(x.id.as_str()).or_insert(x.entry);
                    *e = e.min(x.entry);
                }
                first.values().any(|&e| e > 0.0)
            }
        }
    }

    /// Records of the given subjects, preserving order. The result is not
    /// re-validated: a fold may legitimately hold no events.
    pub fn subset(&self, ids: &HashSet<String>) -> SurvivalTask {
        let records = match &self.records {
            Records::Subjects(r) => {
                Records::Subjects(r.iter().filter(|x| ids.contains(&x.id)).cloned().collect())
            }
            Records::StartStop(r) => {
                Records::StartStop(r.iter().filter(|x| ids.contains(&x.id)).cloned().collect())
            }
        };
        SurvivalTask {
            kind: self.kind,
            records,
            state_graph: self.state_graph.clone(),
            schema: self.schema.clone(),
            cause_labels: self.cause_labels.clone(),
        }
    }
}

/// Per-subject `(id, features)` rows encoded against a training schema.
pub type FeatureRows = Vec<(String, Vec<f64>)>;

/// Column-role mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatSpec {
    pub kind: TaskKind,
    pub id: String,
    pub time: String,
    pub status: String,
    pub cause: String,
    pub entry: String,
    pub from: String,
    pub to: String,
    pub episode: String,
    pub tstart: String,
    pub tstop: String,
    /// Columns forced to categorical even when every value is numeric.
    pub categorical: Vec<String>,
    /// Admissible cause labels; other labels are rejected.
    pub cause_levels: Option<Vec<String>>,
    /// Declared transitions as `(from, to)` labels; inferred from the data
    /// when absent.
    pub edges: Option<Vec<(String, String)>>,
}

impl FormatSpec {
    pub fn new(kind: TaskKind) -> Self {
        FormatSpec {
            kind,
            id: "id".into(),
            time: "time".into(),
            status: "status".into(),
            cause: "cause".into(),
            entry: "entry".into(),
            from: "from".into(),
            to: "to".into(),
            episode: "episode".into(),
            tstart: "tstart".into(),
            tstop: "tstop".into(),
            categorical: vec![],
            cause_levels: None,
            edges: None,
        }
    }

    pub fn with_categorical<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.categorical = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_edges<S: AsRef<str>>(mut self, edges: &[(S, S)]) -> Self {
        self.edges = Some(
            edges
                .iter()
                .map(|(a, b)| (a.as_ref().to_string(), b.as_ref().to_string()))
                .collect(),
        );
        self
    }

    fn role_columns(&self) -> Vec<&str> {
        match self.kind {
            TaskKind::SingleEvent => vec![&self.id, &self.time, &self.status, &self.entry],
            TaskKind::CompetingRisks => {
                vec![&self.id, &self.time, &self.status, &self.cause, &self.entry]
            }
            TaskKind::MultiState => vec![
                &self.id,
                &self.from,
                &self.to,
                &self.episode,
                &self.tstart,
                &self.tstop,
                &self.status,
            ],
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, spec: &FormatSpec) -> Result<SurvivalTask, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, spec)
}

/// Parses a task from any CSV reader; see [`load_csv`].
pub fn read_csv<R: Read>(reader: R, spec: &FormatSpec) -> Result<SurvivalTask, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let require =
        |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));

    let roles = spec.role_columns();
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&i| !roles.contains(&header[i].as_str()))
        .collect();

    let rows: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
    let line = |r: usize| r + 2;

    // feature typing and encoding
    let mut columns = Vec::with_capacity(feature_idx.len());
    let mut encoded: Vec<Vec<f64>> = vec![Vec::with_capacity(feature_idx.len()); rows.len()];
    for &c in &feature_idx {
        let name = header[c].clone();
        for (r, row) in rows.iter().enumerate() {
            if row.get(c).unwrap_or("").is_empty() {
                return Err(DataError::Parse {
                    line: line(r),
                    message: format!("missing value for feature `{}`", name),
                });
            }
        }
        let numeric = !spec.categorical.contains(&name)
            && rows.iter().all(|row| {
                row.get(c)
                    .and_then(|v| v.parse::<f64>().ok())
                    .is_some_and(f64::is_finite)
            });
        if numeric {
            for (r, row) in rows.iter().enumerate() {
                encoded[r].push(row[c].parse().unwrap());
            }
            columns.push(FeatureColumn {
                name,
                kind: FeatureKind::Numeric,
            });
        } else {
            let mut levels: Vec<String> = Vec::new();
            for (r, row) in rows.iter().enumerate() {
                let v = &row[c];
                let code = match levels.iter().position(|l| l == v) {
                    Some(k) => k,
                    None => {
                        levels.push(v.to_string());
                        levels.len() - 1
                    }
                };
                encoded[r].push(code as f64);
            }
            columns.push(FeatureColumn {
                name,
                kind: FeatureKind::Categorical { levels },
            });
        }
    }
    let schema = FeatureSchema { columns };

    let num = |row: &csv::StringRecord, c: usize, r: usize, what: &str| -> Result<f64, DataError> {
        let raw = row.get(c).unwrap_or("");
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| DataError::Parse {
                line: line(r),
                message: format!("non-numeric {} `{}`", what, raw),
            })
    };
    let status_of = |row: &csv::StringRecord, c: usize, r: usize| -> Result<u8, DataError> {
        match row.get(c).unwrap_or("") {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(DataError::Parse {
                line: line(r),
                message: format!("status must be 0 or 1, found `{}`", other),
            }),
        }
    };

    let task = match spec.kind {
        TaskKind::SingleEvent | TaskKind::CompetingRisks => {
            let id_c = require(&spec.id)?;
            let time_c = require(&spec.time)?;
            let status_c = require(&spec.status)?;
            let entry_c = find(&spec.entry);
            let cause_c = if spec.kind == TaskKind::CompetingRisks {
                Some(require(&spec.cause)?)
            } else {
                None
            };
            let mut cause_labels: Vec<String> = spec.cause_levels.clone().unwrap_or_default();
            let mut records = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                let time = num(row, time_c, r, "time")?;
                let entry = match entry_c {
                    Some(c) => num(row, c, r, "entry")?,
                    None => 0.0,
                };
                if time <= entry {
                    return Err(DataError::Parse {
                        line: line(r),
                        message: format!("time {} must exceed entry {}", time, entry),
                    });
                }
                let status = status_of(row, status_c, r)?;
                let cause = match cause_c {
                    Some(c) if status == 1 => {
                        let label = row.get(c).unwrap_or("");
                        if label.is_empty() {
                            return Err(DataError::Parse {
                                line: line(r),
                                message: "event without a cause label".into(),
                            });
                        }
                        match cause_labels.iter().position(|l| l == label) {
                            Some(k) => Some(k + 1),
                            None if spec.cause_levels.is_some() => {
                                return Err(DataError::Parse {
                                    line: line(r),
                                    message: format!("unknown cause label `{}`", label),
                                })
                            }
                            None => {
                                cause_labels.push(label.to_string());
                                Some(cause_labels.len())
                            }
                        }
                    }
                    _ => None,
                };
                records.push(SubjectRecord {
                    id: row[id_c].to_string(),
                    entry,
                    time,
                    status,
                    cause,
                    features: std::mem::take(&mut encoded[r]),
                });
            }
            SurvivalTask::new(
                spec.kind,
                Records::Subjects(records),
                None,
                schema,
                cause_labels,
            )?
        }
        TaskKind::MultiState => {
            let id_c = require(&spec.id)?;
            let from_c = require(&spec.from)?;
            let to_c = require(&spec.to)?;
            let ep_c = require(&spec.episode)?;
            let start_c = require(&spec.tstart)?;
            let stop_c = require(&spec.tstop)?;
            let status_c = require(&spec.status)?;
            let declared = spec.edges.is_some();
            let mut graph = match &spec.edges {
                Some(e) => StateGraph::from_labels(e),
                None => StateGraph {
                    states: vec![],
                    edges: vec![],
                },
            };
            let mut records = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                let entry = num(row, start_c, r, "tstart")?;
                let exit = num(row, stop_c, r, "tstop")?;
                if exit <= entry {
                    return Err(DataError::Parse {
                        line: line(r),
                        message: format!("tstop {} must exceed tstart {}", exit, entry),
                    });
                }
                let status = status_of(row, status_c, r)?;
                let episode: u32 = row[ep_c].parse().map_err(|_| DataError::Parse {
                    line: line(r),
                    message: format!("episode must be a positive integer, found `{}`", &row[ep_c]),
                })?;
                let mut state = |label: &str| -> Result<usize, DataError> {
                    match graph.state_index(label) {
                        Some(i) => Ok(i),
                        None if declared => Err(DataError::Parse {
                            line: line(r),
                            message: format!("unknown state `{}`", label),
                        }),
                        None => {
                            graph.states.push(label.to_string());
                            Ok(graph.states.len() - 1)
                        }
                    }
                };
                let from = state(&row[from_c])?;
                let to = state(&row[to_c])?;
                if graph.edge_index(from, to).is_none() {
                    if declared {
                        return Err(DataError::Parse {
                            line: line(r),
                            message: format!(
                                "transition {} -> {} is not a declared edge",
                                &row[from_c], &row[to_c]
                            ),
                        });
                    }
                    graph.edges.push((from, to));
                }
                records.push(StartStopRecord {
                    id: row[id_c].to_string(),
                    from,
                    to,
                    episode,
                    entry,
                    exit,
                    status,
                    features: std::mem::take(&mut encoded[r]),
                });
            }
            SurvivalTask::new(
                TaskKind::MultiState,
                Records::StartStop(records),
                Some(graph),
                schema,
                vec![],
            )?
        }
    };
    Ok(task)
}

/// Reads prediction inputs: the `id` column plus every column of `schema`,
/// matched by name. Outcome and other extra columns are ignored, so both
/// training files and feature-only files work. Rows repeating an earlier id
/// (start-stop layouts) are skipped. Returns `(id, features)` rows and the
/// number of categorical values unknown to the schema, which are mapped to
/// the reference level.
pub fn read_feature_rows<R: Read>(
    reader: R,
    id: &str,
    schema: &FeatureSchema,
) -> Result<(FeatureRows, usize), DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_c = find(id)?;
    let cols: Vec<usize> = schema.columns.iter().map(|c| find(&c.name)).collect::<Result<_, _>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut unknown = 0;
    for (r, row) in rdr.records().enumerate() {
        let row = row?;
        let line = r + 2;
        let subject = row.get(id_c).unwrap_or("").to_string();
        if !seen.insert(subject.clone()) {
            continue;
        }
        let mut x = Vec::with_capacity(cols.len());
        for (col, &c) in schema.columns.iter().zip(&cols) {
            let raw = row.get(c).unwrap_or("");
            match &col.kind {
                FeatureKind::Numeric => {
                    let v = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        DataError::Parse {
                            line,
                            message: format!("non-numeric value `{}` for feature `{}`", raw, col.name),
                        }
                    })?;
                    x.push(v);
                }
                FeatureKind::Categorical { levels } => {
                    let as_number = raw.parse::<f64>().ok().map(format_number);
                    let code = levels
                        .iter()
                        .position(|l| l == raw || Some(l) == as_number.as_ref());
                    match code {
                        Some(k) => x.push(k as f64),
                        None => {
                            unknown += 1;
                            x.push(0.0);
                        }
                    }
                }
            }
        }
        out.push((subject, x));
    }
    Ok((out, unknown))
}

/// Formats a number with at most 12 significant digits, using the shortest
/// representation of the rounded value.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{:.11e}", x).parse().unwrap_or(x);
    format!("{}", rounded)
}

fn feature_label(schema: &FeatureSchema, c: usize, v: f64) -> String {
    match &schema.columns[c].kind {
        FeatureKind::Numeric => format_number(v),
        FeatureKind::Categorical { levels } => levels[v as usize].clone(),
    }
}

/// Feature values as CSV fields: numbers formatted, categories as labels.
pub fn feature_fields(schema: &FeatureSchema, features: &[f64]) -> Vec<String> {
    features
        .iter()
        .enumerate()
        .map(|(c, &v)| feature_label(schema, c, v))
        .collect()
}

/// Writes `task` in the layout [`load_csv`] reads.
pub fn write_csv<W: Write>(task: &SurvivalTask, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let names = task.schema.columns.iter().map(|c| c.name.clone());
    match &task.records {
        Records::Subjects(records) => {
            let with_entry = records.iter().any(|r| r.entry != 0.0);
            let with_cause = task.kind == TaskKind::CompetingRisks;
            let mut header = vec!["id".to_string(), "time".into(), "status".into()];
            if with_cause {
                header.push("cause".into());
            }
            if with_entry {
                header.push("entry".into());
            }
            header.extend(names);
            w.write_record(&header)?;
            for r in records {
                let mut row = vec![r.id.clone(), format_number(r.time), r.status.to_string()];
                if with_cause {
                    row.push(
                        r.cause
                            .map(|k| task.cause_labels[k - 1].clone())
                            .unwrap_or_default(),
                    );
                }
                if with_entry {
                    row.push(format_number(r.entry));
                }
                row.extend(
                    r.features
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| feature_label(&task.schema, c, v)),
                );
                w.write_record(&row)?;
            }
        }
        Records::StartStop(records) => {
            let graph = task.state_graph.as_ref().expect("validated multi-state task");
            let mut header: Vec<String> = ["id", "from", "to", "episode", "tstart", "tstop", "status"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            header.extend(names);
            w.write_record(&header)?;
            for r in records {
                let mut row = vec![
                    r.id.clone(),
                    graph.states[r.from].clone(),
                    graph.states[r.to].clone(),
                    r.episode.to_string(),
                    format_number(r.entry),
                    format_number(r.exit),
                    r.status.to_string(),
                ];
                row.extend(
                    r.features
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| feature_label(&task.schema, c, v)),
                );
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn export_csv(task: &SurvivalTask, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(task, file)
}

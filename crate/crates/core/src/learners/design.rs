//! Formula parsing and design-matrix encoding.
//!
//! A formula is a `+`-separated list of terms. A term is a single factor or
//! an interaction `a:b`; `a*b` expands to `a + b + a:b`. Factors are feature
//! names, `.` (every feature), and the reserved names `time` (interval end
//! point), `interval` (interval index as a factor), `cause`, `transition`,
//! `episode` and `tau`. The intercept is implicit and not part of the
//! design; `1` alone means intercept-only.

use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::data::{FeatureKind, FeatureSchema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum Factor {
    Feature(usize),
    Time,
    Interval,
    Cause,
    Transition,
    Episode,
    Tau,
}

/// What a design row can see besides the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignContext {
    /// Number of intervals, when rows are interval-specific.
    pub n_intervals: Option<usize>,
    pub n_causes: usize,
    pub cause_labels: Vec<String>,
    /// Transition labels, when rows are transition-specific.
    pub transitions: Vec<String>,
    pub n_episodes: u32,
    pub has_tau: bool,
}

impl DesignContext {
    /// Rows carry features only.
    pub fn plain() -> Self {
        DesignContext {
            n_intervals: None,
            n_causes: 1,
            cause_labels: vec![],
            transitions: vec![],
            n_episodes: 1,
            has_tau: false,
        }
    }
}

/// Values a single design row is built from.
#[derive(Debug, Clone, Copy)]
pub struct RowInput<'a> {
    pub features: &'a [f64],
    /// 1-based interval index.
    pub j: usize,
    pub a_end: f64,
    /// 1-based cause.
    pub cause: usize,
    /// Edge index into the state graph.
    pub edge: usize,
    pub episode: u32,
    pub tau: f64,
}

impl<'a> RowInput<'a> {
    pub fn new(features: &'a [f64]) -> Self {
        RowInput {
            features,
            j: 1,
            a_end: 0.0,
            cause: 1,
            edge: 0,
            episode: 1,
            tau: 0.0,
        }
    }
}

/// Dense row-major design matrix without an intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub nrows: usize,
    pub data: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, nrows: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), names.len() * nrows);
        DesignMatrix { names, nrows, data }
    }

    /// `n x 0` matrix, for intercept-only fits.
    pub fn empty(nrows: usize) -> Self {
        DesignMatrix {
            names: vec![],
            nrows,
            data: vec![],
        }
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols() + j]
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.ncols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            names: self.names.clone(),
            nrows: idx.len(),
            data,
        }
    }
}

/// A parsed formula resolved against a feature schema and design context;
/// reused verbatim at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub formula: String,
    terms: Vec<Vec<Factor>>,
    pub schema: FeatureSchema,
    pub context: DesignContext,
    pub names: Vec<String>,
}

fn parse_factor(
    token: &str,
    schema: &FeatureSchema,
) -> Result<Vec<Factor>, LearnerError> {
    let bad = |m: String| LearnerError::Formula(m);
    Ok(match token {
        "." => (0..schema.len()).map(Factor::Feature).collect(),
        "time" => vec![Factor::Time],
        "interval" => vec![Factor::Interval],
        "cause" => vec![Factor::Cause],
        "transition" => vec![Factor::Transition],
        "episode" => vec![Factor::Episode],
        "tau" => vec![Factor::Tau],
        "" => return Err(bad("empty factor".into())),
        name => vec![Factor::Feature(
            schema
                .index_of(name)
                .ok_or_else(|| bad(format!("unknown term `{}`", name)))?,
        )],
    })
}

fn cartesian(parts: &[Vec<Factor>]) -> Vec<Vec<Factor>> {
    let mut out: Vec<Vec<Factor>> = vec![vec![]];
    for choices in parts {
        let mut next = Vec::new();
        for prefix in &out {
            for f in choices {
                let mut t = prefix.clone();
                t.push(f.clone());
                next.push(t);
            }
        }
        out = next;
    }
    out
}

fn parse_terms(formula: &str, schema: &FeatureSchema) -> Result<Vec<Vec<Factor>>, LearnerError> {
    let mut terms: Vec<Vec<Factor>> = Vec::new();
    let trimmed = formula.trim();
    if trimmed == "1" {
        return Ok(terms);
    }
    for part in trimmed.split('+') {
        let part = part.trim();
        if part.is_empty() {
            return Err(LearnerError::Formula(format!("empty term in `{}`", formula)));
        }
        let mut expanded = Vec::new();
        if part.contains('*') {
            let factors: Vec<Vec<Factor>> = part
                .split('*')
                .map(|t| parse_factor(t.trim(), schema))
                .collect::<Result<_, _>>()?;
            let k = factors.len();
            // all non-empty subsets, by size then position
            for size in 1..=k {
                for mask in 1u32..(1 << k) {
                    if mask.count_ones() as usize != size {
                        continue;
                    }
                    let chosen: Vec<Vec<Factor>> = (0..k)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| factors[i].clone())
                        .collect();
                    expanded.extend(cartesian(&chosen));
                }
            }
        } else {
            let factors: Vec<Vec<Factor>> = part
                .split(':')
                .map(|t| parse_factor(t.trim(), schema))
                .collect::<Result<_, _>>()?;
            expanded.extend(cartesian(&factors));
        }
        for t in expanded {
            let mut key = t.clone();
            key.sort_by_key(factor_rank);
            key.dedup();
            if !terms.iter().any(|x| {
                let mut y = x.clone();
                y.sort_by_key(factor_rank);
                y == key
            }) {
                terms.push(t);
            }
        }
    }
    Ok(terms)
}

fn factor_rank(f: &Factor) -> (usize, usize) {
    match f {
        Factor::Feature(i) => (0, *i),
        Factor::Time => (1, 0),
        Factor::Interval => (2, 0),
        Factor::Cause => (3, 0),
        Factor::Transition => (4, 0),
        Factor::Episode => (5, 0),
        Factor::Tau => (6, 0),
    }
}

impl Encoder {
    pub fn new(
        formula: &str,
        schema: &FeatureSchema,
        context: DesignContext,
    ) -> Result<Self, LearnerError> {
        let terms = parse_terms(formula, schema)?;
        let mut enc = Encoder {
            formula: formula.to_string(),
            terms,
            schema: schema.clone(),
            context,
            names: vec![],
        };
        for term in &enc.terms {
            for f in term {
                let missing = match f {
                    Factor::Time | Factor::Interval => enc.context.n_intervals.is_none(),
                    Factor::Transition => enc.context.transitions.is_empty(),
                    Factor::Tau => !enc.context.has_tau,
                    _ => false,
                };
                if missing {
                    return Err(LearnerError::Formula(format!(
                        "term `{}` is not available for this reduction",
                        enc.factor_name(f)
                    )));
                }
            }
        }
        enc.names = enc
            .terms
            .iter()
            .flat_map(|t| enc.term_names(t))
            .collect();
        Ok(enc)
    }

    fn factor_name(&self, f: &Factor) -> String {
        match f {
            Factor::Feature(i) => self.schema.columns[*i].name.clone(),
            Factor::Time => "time".into(),
            Factor::Interval => "interval".into(),
            Factor::Cause => "cause".into(),
            Factor::Transition => "transition".into(),
            Factor::Episode => "episode".into(),
            Factor::Tau => "tau".into(),
        }
    }

    fn block_names(&self, f: &Factor) -> Vec<String> {
        let name = self.factor_name(f);
        let level_names = |labels: Vec<String>| -> Vec<String> {
            labels
                .into_iter()
                .skip(1)
                .map(|l| format!("{}={}", name, l))
                .collect()
        };
        match f {
            Factor::Feature(i) => match &self.schema.columns[*i].kind {
                FeatureKind::Numeric => vec![name],
                FeatureKind::Categorical { levels } => level_names(levels.clone()),
            },
            Factor::Time | Factor::Tau => vec![name],
            Factor::Interval => {
                level_names((1..=self.context.n_intervals.unwrap_or(1)).map(|j| j.to_string()).collect())
            }
            Factor::Cause => level_names(
                (1..=self.context.n_causes)
                    .map(|k| {
                        self.context
                            .cause_labels
                            .get(k - 1)
                            .cloned()
                            .unwrap_or_else(|| k.to_string())
                    })
                    .collect(),
            ),
            Factor::Transition => level_names(self.context.transitions.clone()),
            Factor::Episode => {
                level_names((1..=self.context.n_episodes).map(|e| e.to_string()).collect())
            }
        }
    }

    fn term_names(&self, term: &[Factor]) -> Vec<String> {
        let mut out = vec![String::new()];
        for f in term {
            let block = self.block_names(f);
            let mut next = Vec::with_capacity(out.len() * block.len());
            for prefix in &out {
                for b in &block {
                    next.push(if prefix.is_empty() {
                        b.clone()
                    } else {
                        format!("{}:{}", prefix, b)
                    });
                }
            }
            out = next;
        }
        out
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    /// Appends the block of one factor; returns true when a level had to
    /// fall back to the reference.
    fn block(&self, f: &Factor, input: &RowInput, out: &mut Vec<f64>) -> bool {
        let one_hot = |out: &mut Vec<f64>, levels: usize, code: usize| {
            let start = out.len();
            out.resize(start + levels.saturating_sub(1), 0.0);
            if code >= 1 && code < levels {
                out[start + code - 1] = 1.0;
            }
        };
        match f {
            Factor::Feature(i) => match &self.schema.columns[*i].kind {
                FeatureKind::Numeric => out.push(input.features[*i]),
                FeatureKind::Categorical { levels } => {
                    one_hot(out, levels.len(), input.features[*i] as usize)
                }
            },
            Factor::Time => out.push(input.a_end),
            Factor::Tau => out.push(input.tau),
            Factor::Interval => one_hot(out, self.context.n_intervals.unwrap_or(1), input.j - 1),
            Factor::Cause => one_hot(out, self.context.n_causes, input.cause - 1),
            Factor::Transition => one_hot(out, self.context.transitions.len(), input.edge),
            Factor::Episode => {
                let n = self.context.n_episodes as usize;
                let e = input.episode as usize;
                one_hot(out, n, if e > n { 0 } else { e - 1 });
                return e > n;
            }
        }
        false
    }

    /// Appends one encoded row to `out`; returns true if an unseen level
    /// was mapped to the reference.
    pub fn encode_into(&self, input: &RowInput, out: &mut Vec<f64>) -> bool {
        let mut unknown = false;
        let mut scratch = Vec::new();
        for term in &self.terms {
            if term.len() == 1 {
                unknown |= self.block(&term[0], input, out);
                continue;
            }
            let mut acc = vec![1.0];
            for f in term {
                scratch.clear();
                unknown |= self.block(f, input, &mut scratch);
                let mut next = Vec::with_capacity(acc.len() * scratch.len());
                for a in &acc {
                    for b in &scratch {
                        next.push(a * b);
                    }
                }
                acc = next;
            }
            out.extend_from_slice(&acc);
        }
        unknown
    }

    /// Encodes many rows; the count is the number of rows with an unseen
    /// level.
    pub fn encode<'a>(&self, inputs: impl IntoIterator<Item = RowInput<'a>>) -> (DesignMatrix, usize) {
        let mut data = Vec::new();
        let mut nrows = 0;
        let mut unknown = 0;
        for input in inputs {
            unknown += usize::from(self.encode_into(&input, &mut data));
            nrows += 1;
        }
        (DesignMatrix::new(self.names.clone(), nrows, data), unknown)
    }
}

//! Run configuration: a TOML file with sections, overridden by
//! `--set section.key=value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use survreduce::data::{FormatSpec, TaskKind};
use survreduce::eval::Metric;
use survreduce::learners::{GbtParams, LearnerSpec};
use survreduce::model::{ModelSpec, ReductionKind};
use survreduce::partition::{CensoringRule, CutStrategy};
use survreduce::reduce_point::PvQuantity;
use survreduce::simulate::{Scenario, SimConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override `{0}`: expected section.key=value")]
    BadOverride(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub input: InputSection,
    pub output: OutputSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub glm: GlmSection,
    pub gbt: GbtParams,
    pub predict: PredictSection,
    pub eval: EvalSection,
    pub simulate: SimulateSection,
    pub benchmark: BenchmarkSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: None,
            input: Default::default(),
            output: Default::default(),
            data: Default::default(),
            model: Default::default(),
            glm: Default::default(),
            gbt: Default::default(),
            predict: Default::default(),
            eval: Default::default(),
            simulate: Default::default(),
            benchmark: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub train: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub aggregate: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
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
    pub categorical: Vec<String>,
    pub cause_levels: Option<Vec<String>>,
    pub edges: Option<Vec<[String; 2]>>,
}

impl Default for DataSection {
    fn default() -> Self {
        let f = FormatSpec::new(TaskKind::SingleEvent);
        DataSection {
            kind: f.kind,
            id: f.id,
            time: f.time,
            status: f.status,
            cause: f.cause,
            entry: f.entry,
            from: f.from,
            to: f.to,
            episode: f.episode,
            tstart: f.tstart,
            tstop: f.tstop,
            categorical: f.categorical,
            cause_levels: f.cause_levels,
            edges: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerName {
    Glm,
    Gbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutKind {
    Default,
    Equidistant,
    Width,
    EventQuantiles,
    AllEventTimes,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PvKind {
    Survival,
    Rmst,
    Cif,
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub reduction: ReductionKind,
    pub learner: LearnerName,
    pub formula: Option<String>,
    pub cuts: CutKind,
    pub intervals: usize,
    pub width: Option<f64>,
    pub cut_points: Vec<f64>,
    pub censoring_rule: Option<CensoringRule>,
    pub separate_causes: bool,
    pub tau: Option<f64>,
    pub pv_quantity: PvKind,
    pub pv_cause: usize,
    pub pv_from: usize,
    pub pv_to: usize,
    pub pv_taus: Option<Vec<f64>>,
    pub clip: bool,
    pub valid_fraction: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let spec = ModelSpec::default();
        ModelSection {
            reduction: spec.reduction,
            learner: LearnerName::Glm,
            formula: None,
            cuts: CutKind::Default,
            intervals: 20,
            width: None,
            cut_points: vec![],
            censoring_rule: None,
            separate_causes: false,
            tau: None,
            pv_quantity: PvKind::Survival,
            pv_cause: 1,
            pv_from: 0,
            pv_to: 0,
            pv_taus: None,
            clip: spec.clip,
            valid_fraction: spec.valid_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmSection {
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub horizons: Vec<f64>,
}

/// Random-search evaluations: a count, or `"auto"` for 50 per tunable
/// parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Evaluations(usize),
    Auto(AutoBudget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoBudget {
    Auto,
}

impl Budget {
    pub fn evaluations(self) -> Option<usize> {
        match self {
            Budget::Evaluations(n) => Some(n),
            Budget::Auto(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: Vec<Metric>,
    pub folds: usize,
    pub repeats: Option<usize>,
    pub budget: Budget,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            metrics: vec![Metric::HarrellC, Metric::Isbs],
            folds: 3,
            repeats: None,
            budget: Budget::Evaluations(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Constant,
    Breakpoint,
    Tve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: ScenarioName,
    pub n: usize,
    pub censoring_rate: f64,
    pub max_time: Option<f64>,
    pub rate: Option<f64>,
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub breakpoint: Option<f64>,
    pub h0: Option<f64>,
    pub amplitude: Option<f64>,
    pub period: Option<f64>,
    pub phase: Option<f64>,
    pub beta_x1: Option<f64>,
    pub beta_group: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        SimulateSection {
            scenario: ScenarioName::Breakpoint,
            n: sim.n,
            censoring_rate: sim.censoring_rate,
            max_time: sim.max_time,
            rate: None,
            h1: None,
            h2: None,
            breakpoint: None,
            h0: None,
            amplitude: None,
            period: None,
            phase: None,
            beta_x1: None,
            beta_group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub tasks: Vec<String>,
    pub learners: Vec<String>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            tasks: vec!["synthetic-breakpoint".into(), "synthetic-tve".into()],
            learners: ["km", "ph-glm", "pem-gbt", "dt-gbt"].map(String::from).to_vec(),
        }
    }
}

/// Every configuration key with its documentation, as shown by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "Seed for simulation, holdout splits, resampling and search (default 1)"),
    ("workers", "Worker threads; overrides SURVREDUCE_WORKERS (default: all cores)"),
    ("input.data", "Input CSV (also -i/--input)"),
    ("input.model", "Fitted model file for predict/evaluate (also --model)"),
    ("input.state", "Transform state to reuse, e.g. the training cut grid (also --state)"),
    ("input.train", "Training CSV for censoring weights and horizon when evaluating a saved model (default: input.data)"),
    ("output.path", "Output file; stdout when unset (also -o/--output)"),
    ("output.state", "Transform state file (default: <output.path>.state.json)"),
    ("output.aggregate", "Aggregate score table for evaluate/benchmark"),
    ("data.kind", "single-event | competing-risks | multi-state (default single-event)"),
    ("data.id", "Subject id column (default id)"),
    ("data.time", "Event or censoring time column (default time)"),
    ("data.status", "Status column, 0 or 1 (default status)"),
    ("data.cause", "Cause column for competing risks (default cause)"),
    ("data.entry", "Optional left-truncation time column (default entry)"),
    ("data.from", "Start-stop origin state column (default from)"),
    ("data.to", "Start-stop target state column (default to)"),
    ("data.episode", "Start-stop episode column (default episode)"),
    ("data.tstart", "Start-stop window start column (default tstart)"),
    ("data.tstop", "Start-stop window end column (default tstop)"),
    ("data.categorical", "Columns forced categorical (default [])"),
    ("data.cause_levels", "Admissible cause labels (default: as found)"),
    ("data.edges", "Declared transitions as [[from, to], ...] (default: inferred)"),
    ("model.reduction", "pem | dt | ipcw | crm | pv | km (default pem)"),
    ("model.learner", "glm | gbt (default glm)"),
    ("model.formula", "Feature formula, e.g. \". + time\" or \"x*interval\" (default per reduction)"),
    ("model.cuts", "default | equidistant | width | event-quantiles | all-event-times | explicit"),
    ("model.intervals", "Interval count for equidistant and event-quantiles cuts (default 20)"),
    ("model.width", "Interval width for width cuts"),
    ("model.cut_points", "Cut points for explicit cuts"),
    ("model.censoring_rule", "keep-partial | drop-partial (default: keep for pem, drop for dt)"),
    ("model.separate_causes", "One model per cause instead of a stacked model (default false)"),
    ("model.tau", "IPCW horizon (default: median observed time)"),
    ("model.pv_quantity", "survival | rmst | cif | transition (default survival)"),
    ("model.pv_cause", "Cause for cif pseudo-values, 1-based (default 1)"),
    ("model.pv_from", "Origin state for transition pseudo-values (default 0)"),
    ("model.pv_to", "Target state for transition pseudo-values (default 0)"),
    ("model.pv_taus", "Pseudo-value horizons (default: event-time quantiles at k/8, k = 1..7)"),
    ("model.clip", "Clip probability pseudo-value predictions to [0, 1] (default false)"),
    ("model.valid_fraction", "Holdout share for gbt early stopping (default 0.2)"),
    ("glm.lambda", "Ridge penalty, intercept excluded (default 0)"),
    ("gbt.learning_rate", "Shrinkage (default 0.1)"),
    ("gbt.max_depth", "Tree depth (default 3)"),
    ("gbt.min_leaf", "Minimum rows per leaf (default 5)"),
    ("gbt.nrounds", "Boosting rounds (default 200)"),
    ("gbt.early_stop_rounds", "Stop after this many rounds without holdout improvement; 0 disables (default 0)"),
    ("gbt.reg_lambda", "L2 penalty on leaf values (default 1)"),
    ("gbt.max_delta_step", "Cap on raw leaf values; 0 disables (default 0.7 for poisson, else 0)"),
    ("gbt.base_score", "Initial prediction on the link scale (default: link of the mean)"),
    ("predict.horizons", "Horizons for RMST output, or PV prediction horizons (default [])"),
    ("eval.metrics", "harrell_c and/or isbs (default both)"),
    ("eval.folds", "Cross-validation folds (default 3)"),
    ("eval.repeats", "Repeats (default: 3 up to 500 events, 2 up to 1000, else 1)"),
    ("eval.budget", "Random-search evaluations per split, or \"auto\" for 50 per parameter (default 0)"),
    ("simulate.scenario", "constant | breakpoint | tve (default breakpoint)"),
    ("simulate.n", "Subjects (default 1000)"),
    ("simulate.censoring_rate", "Target censoring share (default 0.3)"),
    ("simulate.max_time", "Administrative censoring time (default none)"),
    ("simulate.rate", "constant: hazard (default 1)"),
    ("simulate.h1", "breakpoint: hazard before the breakpoint (default 0.2)"),
    ("simulate.h2", "breakpoint: hazard after the breakpoint (default 1)"),
    ("simulate.breakpoint", "breakpoint: change time (default 1)"),
    ("simulate.h0", "tve: baseline hazard (default 0.5)"),
    ("simulate.amplitude", "tve: amplitude of f(t) = amplitude * sin(2 pi t / period + phase) (default 2)"),
    ("simulate.period", "tve: period of f (default 4)"),
    ("simulate.phase", "tve: phase of f (default -pi/2)"),
    ("simulate.beta_x1", "Log hazard ratio of x1 (default 0 constant, 0.8 breakpoint, 0.6 tve)"),
    ("simulate.beta_group", "Log hazard ratio of group (default 0 constant, -0.7 breakpoint)"),
    ("benchmark.tasks", "synthetic-breakpoint, synthetic-tve or CSV paths read with [data]"),
    ("benchmark.learners", "km, ph-glm, or <pem|dt|ipcw|crm|pv>-<glm|gbt> (default km, ph-glm, pem-gbt, dt-gbt)"),
];

/// The key table as shown after `--help`.
pub fn help_text() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from(
        "Configuration keys (TOML file via --config, or --set key=value):\n",
    );
    let mut section = "";
    for (key, doc) in KEYS {
        let this = key.split_once('.').map_or("", |(s, _)| s);
        if this != section {
            s.push_str(&format!("\n  [{}]\n", this));
            section = this;
        }
        s.push_str(&format!("  {:width$}  {}\n", key, doc, width = width));
    }
    s.push_str(
        "\nExit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.\n\
         Environment: SURVREDUCE_WORKERS sets the worker count unless `workers` is set.\n",
    );
    s
}

/// Reads the config file (if any) and applies `overrides` in order.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?;
            text.parse::<toml::Table>()?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(toml::Value::Table(table).try_into()?)
}

fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), ConfigError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(text.into()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(text.into()));
    }
    let raw = raw.trim();
    let value = format!("v = {}", raw)
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()));
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(text.into()))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn format_spec(&self) -> FormatSpec {
        let d = &self.data;
        let mut f = FormatSpec::new(d.kind);
        f.id = d.id.clone();
        f.time = d.time.clone();
        f.status = d.status.clone();
        f.cause = d.cause.clone();
        f.entry = d.entry.clone();
        f.from = d.from.clone();
        f.to = d.to.clone();
        f.episode = d.episode.clone();
        f.tstart = d.tstart.clone();
        f.tstop = d.tstop.clone();
        f.categorical = d.categorical.clone();
        f.cause_levels = d.cause_levels.clone();
        f.edges = d
            .edges
            .as_ref()
            .map(|e| e.iter().map(|[a, b]| (a.clone(), b.clone())).collect());
        f
    }

    pub fn learner(&self, name: LearnerName) -> LearnerSpec {
        match name {
            LearnerName::Glm => LearnerSpec::Glm {
                lambda: self.glm.lambda,
            },
            LearnerName::Gbt => LearnerSpec::Gbt(self.gbt.clone()),
        }
    }

    pub fn cut_strategy(&self) -> Result<CutStrategy, ConfigError> {
        let m = &self.model;
        Ok(match m.cuts {
            CutKind::Default => CutStrategy::Default,
            CutKind::Equidistant => CutStrategy::Equidistant {
                intervals: m.intervals,
            },
            CutKind::EventQuantiles => CutStrategy::EventQuantiles {
                intervals: m.intervals,
            },
            CutKind::AllEventTimes => CutStrategy::AllEventTimes,
            CutKind::Width => CutStrategy::Width {
                width: m
                    .width
                    .ok_or_else(|| ConfigError::Invalid("model.cuts = \"width\" needs model.width".into()))?,
            },
            CutKind::Explicit => {
                if m.cut_points.is_empty() {
                    return Err(ConfigError::Invalid(
                        "model.cuts = \"explicit\" needs model.cut_points".into(),
                    ));
                }
                CutStrategy::Explicit {
                    cuts: m.cut_points.clone(),
                }
            }
        })
    }

    pub fn pv_quantity(&self) -> PvQuantity {
        let m = &self.model;
        match m.pv_quantity {
            PvKind::Survival => PvQuantity::Survival,
            PvKind::Rmst => PvQuantity::Rmst,
            PvKind::Cif => PvQuantity::Cif { cause: m.pv_cause },
            PvKind::Transition => PvQuantity::Transition {
                from: m.pv_from,
                to: m.pv_to,
            },
        }
    }

    /// The model described by `[model]`, `[glm]` and `[gbt]`.
    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let m = &self.model;
        Ok(ModelSpec {
            reduction: m.reduction,
            learner: self.learner(m.learner),
            formula: m.formula.clone(),
            cuts: self.cut_strategy()?,
            censoring_rule: m.censoring_rule,
            separate_causes: m.separate_causes,
            tau: m.tau,
            pv_quantity: self.pv_quantity(),
            pv_taus: m.pv_taus.clone(),
            clip: m.clip,
            valid_fraction: m.valid_fraction,
            seed: self.seed,
        })
    }

    /// The scenario named in `[simulate]` with any parameter overrides.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let s = &self.simulate;
        let name = match s.scenario {
            ScenarioName::Constant => "constant",
            ScenarioName::Breakpoint => "breakpoint",
            ScenarioName::Tve => "tve",
        };
        let mut sc = Scenario::by_name(name).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        match &mut sc {
            Scenario::Constant {
                rate,
                beta_x1,
                beta_group,
            } => {
                set(rate, s.rate);
                set(beta_x1, s.beta_x1);
                set(beta_group, s.beta_group);
                check_foreign(
                    name,
                    &[
                    ("h1", s.h1),
                    ("h2", s.h2),
                    ("breakpoint", s.breakpoint),
                    ("h0", s.h0),
                    ("amplitude", s.amplitude),
                    ("period", s.period),
                    ("phase", s.phase),
                ],
                )?;
            }
            Scenario::Breakpoint {
                h1,
                h2,
                breakpoint,
                beta_x1,
                beta_group,
            } => {
                set(h1, s.h1);
                set(h2, s.h2);
                set(breakpoint, s.breakpoint);
                set(beta_x1, s.beta_x1);
                set(beta_group, s.beta_group);
                check_foreign(
                    name,
                    &[
                    ("rate", s.rate),
                    ("h0", s.h0),
                    ("amplitude", s.amplitude),
                    ("period", s.period),
                    ("phase", s.phase),
                ],
                )?;
            }
            Scenario::Tve {
                h0,
                amplitude,
                period,
                phase,
                beta_x1,
            } => {
                set(h0, s.h0);
                set(amplitude, s.amplitude);
                set(period, s.period);
                set(phase, s.phase);
                set(beta_x1, s.beta_x1);
                check_foreign(
                    name,
                    &[
                    ("rate", s.rate),
                    ("h1", s.h1),
                    ("h2", s.h2),
                    ("breakpoint", s.breakpoint),
                    ("beta_group", s.beta_group),
                ],
                )?;
            }
        }
        Ok(sc)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n: self.simulate.n,
            seed: self.seed,
            censoring_rate: self.simulate.censoring_rate,
            max_time: self.simulate.max_time,
        }
    }
}

fn check_foreign(scenario: &str, params: &[(&str, Option<f64>)]) -> Result<(), ConfigError> {
    match params.iter().find(|(_, v)| v.is_some()) {
        Some((name, _)) => Err(ConfigError::Invalid(format!(
            "simulate.{} does not apply to the {} scenario",
            name, scenario
        ))),
        None => Ok(()),
    }
}

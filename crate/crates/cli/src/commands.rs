use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use survreduce::data::{format_number, load_csv, read_feature_rows, write_csv, SurvivalTask};
use survreduce::estimators::StepFunction;
use survreduce::eval::{benchmark, default_space, score_model, BenchConfig, BenchLearner, ScoreTable};
use survreduce::learners::LearnerSpec;
use survreduce::model::{fit_model, median_time, FittedModel, ModelSpec, ReductionKind};
use survreduce::partition::{expand, make_cuts, write_long_csv, CensoringRule, CutGrid};
use survreduce::reduce_dist::write_curves;
use survreduce::reduce_point::{
    crm_targets, default_taus, ipcw_transform_with, pseudo_values, write_crm_csv, write_ipcw_csv,
    write_pv_csv, PvQuantity,
};
use survreduce::simulate::{simulate, Scenario, SimConfig};

use crate::config::{LearnerName, RunConfig};
use crate::error::CliError;

/// What a transform learned from its input, kept so that test data can be
/// transformed the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reduction", rename_all = "lowercase")]
pub enum TransformState {
    Pem {
        grid: CutGrid,
        censoring_rule: CensoringRule,
    },
    Dt {
        grid: CutGrid,
        censoring_rule: CensoringRule,
    },
    Ipcw {
        tau: f64,
        censoring: StepFunction,
    },
    /// Informational only: CRM targets always come from the data at hand.
    Crm { km: StepFunction },
    Pv {
        quantity: PvQuantity,
        taus: Vec<f64>,
    },
}

impl TransformState {
    fn reduction(&self) -> ReductionKind {
        match self {
            TransformState::Pem { .. } => ReductionKind::Pem,
            TransformState::Dt { .. } => ReductionKind::Dt,
            TransformState::Ipcw { .. } => ReductionKind::Ipcw,
            TransformState::Crm { .. } => ReductionKind::Crm,
            TransformState::Pv { .. } => ReductionKind::Pv,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create `{}`: {}", path.display(), e)))
}

/// A file writer, or stdout when no path is configured.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn input_data(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.input
        .data
        .as_deref()
        .ok_or_else(|| CliError::Config("input.data is required (or pass -i/--input)".into()))
}

fn load_task(cfg: &RunConfig, path: &Path) -> Result<SurvivalTask, CliError> {
    Ok(load_csv(path, &cfg.format_spec())?)
}

fn load_model(cfg: &RunConfig) -> Result<FittedModel, CliError> {
    let path = cfg
        .input
        .model
        .as_deref()
        .ok_or_else(|| CliError::Config("input.model is required (or pass --model)".into()))?;
    FittedModel::load(path).map_err(|e| match e {
        survreduce::ReductionError::Io(io) => {
            CliError::Data(format!("cannot read model `{}`: {}", path.display(), io))
        }
        other => other.into(),
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

// ---------------------------------------------------------------- simulate

pub fn simulate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let task = simulate(&cfg.scenario()?, &cfg.sim_config())?;
    let mut w = output(cfg.output.path.as_deref())?;
    write_csv(&task, &mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- transform

fn state_path(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.output.state.clone().or_else(|| {
        cfg.output.path.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".state.json");
            PathBuf::from(s)
        })
    })
}

fn read_state(cfg: &RunConfig) -> Result<Option<TransformState>, CliError> {
    let Some(path) = cfg.input.state.as_deref() else {
        return Ok(None);
    };
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot read state `{}`: {}", path.display(), e)))?;
    let state: TransformState = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("state `{}`: {}", path.display(), e)))?;
    if state.reduction() != cfg.model.reduction {
        return Err(CliError::Config(format!(
            "state `{}` was written by a {} transform but model.reduction is {}",
            path.display(),
            state.reduction().name(),
            cfg.model.reduction.name()
        )));
    }
    Ok(Some(state))
}

pub fn transform_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let task = load_task(cfg, input_data(cfg)?)?;
    let reused = read_state(cfg)?;
    let mut w = output(cfg.output.path.as_deref())?;
    let state = match cfg.model.reduction {
        kind @ (ReductionKind::Pem | ReductionKind::Dt) => {
            let (grid, rule) = match reused {
                Some(TransformState::Pem { grid, censoring_rule })
                | Some(TransformState::Dt { grid, censoring_rule }) => (grid, censoring_rule),
                _ => {
                    let default_rule = if kind == ReductionKind::Pem {
                        CensoringRule::KeepPartial
                    } else {
                        CensoringRule::DropPartial
                    };
                    let grid = make_cuts(&task, &cfg.cut_strategy()?)?;
                    (grid, cfg.model.censoring_rule.unwrap_or(default_rule))
                }
            };
            let long = expand(&task, &grid, rule)?;
            write_long_csv(&long, &mut w)?;
            if kind == ReductionKind::Pem {
                TransformState::Pem {
                    grid,
                    censoring_rule: rule,
                }
            } else {
                TransformState::Dt {
                    grid,
                    censoring_rule: rule,
                }
            }
        }
        ReductionKind::Ipcw => {
            let (tau, g) = match reused {
                Some(TransformState::Ipcw { tau, censoring }) => (tau, Some(censoring)),
                _ => (cfg.model.tau.unwrap_or_else(|| median_time(&task)), None),
            };
            let data = ipcw_transform_with(&task, tau, g.as_ref())?;
            write_ipcw_csv(&data, &mut w)?;
            TransformState::Ipcw {
                tau,
                censoring: data.censoring,
            }
        }
        ReductionKind::Crm => {
            if reused.is_some() {
                return Err(CliError::Config(
                    "CRM targets are computed from the data itself; input.state does not apply".into(),
                ));
            }
            let data = crm_targets(&task)?;
            if data.degenerate_pairs > 0 {
                eprintln!(
                    "warning: {} pairs hit a zero survival denominator and used the fallback value",
                    data.degenerate_pairs
                );
            }
            write_crm_csv(&data, &mut w)?;
            TransformState::Crm { km: data.km }
        }
        ReductionKind::Pv => {
            let (quantity, taus) = match reused {
                Some(TransformState::Pv { quantity, taus }) => {
                    if quantity != cfg.pv_quantity() {
                        return Err(CliError::Config(format!(
                            "state holds {:?} pseudo-values but the config asks for {:?}",
                            quantity,
                            cfg.pv_quantity()
                        )));
                    }
                    (quantity, taus)
                }
                _ => (
                    cfg.pv_quantity(),
                    cfg.model.pv_taus.clone().unwrap_or_else(|| default_taus(&task)),
                ),
            };
            let data = pseudo_values(&task, quantity, &taus)?;
            if data.extrapolated {
                eprintln!("warning: some horizons lie beyond the last event time; values were held constant");
            }
            write_pv_csv(&data, &mut w)?;
            TransformState::Pv { quantity, taus }
        }
        ReductionKind::Km => {
            return Err(CliError::Config(
                "km is a baseline model, not a transform; choose pem, dt, ipcw, crm or pv".into(),
            ))
        }
    };
    w.flush()?;
    if let Some(path) = state_path(cfg) {
        let mut sw = create(&path)?;
        serde_json::to_writer_pretty(&mut sw, &state)?;
        sw.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------- fit / predict

pub fn fit_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let task = load_task(cfg, input_data(cfg)?)?;
    let model = fit_model(&cfg.model_spec()?, &task)?;
    match cfg.output.path.as_deref() {
        Some(p) => model
            .save(p)
            .map_err(|e| CliError::Data(format!("cannot write model `{}`: {}", p.display(), e)))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", model.to_json()?)?;
        }
    }
    Ok(())
}

fn write_rows<W: Write>(w: &mut csv::Writer<W>, id: &str, time: &str, quantity: &str, cause: &str, value: f64) -> Result<(), CliError> {
    w.write_record([id, time, quantity, cause, &format_number(value)])?;
    Ok(())
}

pub fn predict_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let path = input_data(cfg)?;
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open `{}`: {}", path.display(), e)))?;
    let (subjects, unknown) = read_feature_rows(BufReader::new(file), &cfg.data.id, model.schema())?;
    if unknown > 0 {
        eprintln!("warning: {} categorical values were unseen in training and mapped to the reference level", unknown);
    }
    let horizons = &cfg.predict.horizons;
    let mut out = output(cfg.output.path.as_deref())?;
    match &model {
        FittedModel::Pem(fit) | FittedModel::Dt(fit) => {
            write_curves(fit, &subjects, horizons, &mut out)?;
        }
        other => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["id", "time", "quantity", "cause", "value"])?;
            let mut clipped = 0usize;
            for (id, x) in &subjects {
                match other {
                    FittedModel::Km { curve, .. } => {
                        write_rows(&mut w, id, "0", "survival", "", 1.0)?;
                        for (t, v) in curve.knots.iter().zip(&curve.values) {
                            write_rows(&mut w, id, &format_number(*t), "survival", "", *v)?;
                        }
                        for &h in horizons {
                            write_rows(&mut w, id, &format_number(h), "rmst", "", curve.integral(h))?;
                        }
                    }
                    FittedModel::Ipcw(fit) => {
                        let (event, survival) = fit.predict_risk(x);
                        let t = format_number(fit.tau);
                        write_rows(&mut w, id, &t, "event", "", event)?;
                        write_rows(&mut w, id, &t, "survival", "", survival)?;
                    }
                    FittedModel::Crm(fit) => write_rows(&mut w, id, "", "score", "", fit.predict(x))?,
                    FittedModel::Pv(fit) => {
                        let (quantity, cause) = match fit.quantity {
                            PvQuantity::Survival => ("survival", String::new()),
                            PvQuantity::Rmst => ("rmst", String::new()),
                            PvQuantity::Cif { cause } => ("cif", cause.to_string()),
                            PvQuantity::Transition { from, to } => ("transition", format!("{}->{}", from, to)),
                        };
                        let taus = if horizons.is_empty() { &fit.taus } else { horizons };
                        for &tau in taus {
                            let (v, c) = fit.predict(x, tau);
                            clipped += c as usize;
                            write_rows(&mut w, id, &format_number(tau), quantity, &cause, v)?;
                        }
                    }
                    FittedModel::Pem(_) | FittedModel::Dt(_) => unreachable!(),
                }
            }
            w.flush()?;
            if clipped > 0 {
                eprintln!("warning: {} predictions were clipped to [0, 1]", clipped);
            }
        }
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate / benchmark

fn bench_config(cfg: &RunConfig) -> BenchConfig {
    BenchConfig {
        folds: cfg.eval.folds,
        repeats: cfg.eval.repeats,
        metrics: cfg.eval.metrics.clone(),
        budget: cfg.eval.budget.evaluations(),
        seed: cfg.seed,
    }
}

fn space_for(cfg: &RunConfig, spec: &ModelSpec) -> Vec<survreduce::eval::TuneParam> {
    if spec.reduction == ReductionKind::Km || cfg.eval.budget.evaluations() == Some(0) {
        vec![]
    } else {
        default_space(&spec.learner)
    }
}

fn write_scores(cfg: &RunConfig, table: &ScoreTable) -> Result<(), CliError> {
    let fallbacks = table.rows.iter().filter(|r| r.fallback_used).count();
    if fallbacks > 0 {
        eprintln!("warning: {} scores fell back to the Kaplan-Meier baseline", fallbacks);
    }
    let mut w = output(cfg.output.path.as_deref())?;
    table.write_csv(&mut w)?;
    w.flush()?;
    if let Some(p) = cfg.output.aggregate.as_deref() {
        let mut a = create(p)?;
        table.write_aggregate_csv(&mut a)?;
        a.flush()?;
    }
    Ok(())
}

/// Scores a saved model on the input data, or cross-validates the
/// configured model when no model file is given.
pub fn evaluate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let data_path = input_data(cfg)?;
    let test = load_task(cfg, data_path)?;
    if cfg.input.model.is_some() {
        let model = load_model(cfg)?;
        let train = match cfg.input.train.as_deref() {
            Some(p) => load_task(cfg, p)?,
            None => test.clone(),
        };
        let mut out = output(cfg.output.path.as_deref())?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["metric", "value"])?;
            for &metric in &cfg.eval.metrics {
                let v = score_model(&model, &train, &test, metric)?;
                w.write_record([metric.name(), &format_number(v)])?;
            }
            w.flush()?;
        }
        out.flush()?;
        return Ok(());
    }
    let spec = cfg.model_spec()?;
    let learner = BenchLearner {
        name: match spec.reduction {
            ReductionKind::Km => "km".into(),
            r => format!("{}-{}", r.name(), spec.learner.name()),
        },
        space: space_for(cfg, &spec),
        spec,
    };
    let table = benchmark(&[(stem(data_path), test)], &[learner], &bench_config(cfg))?;
    write_scores(cfg, &table)
}

/// Resolves a benchmark learner preset.
pub fn preset(cfg: &RunConfig, name: &str) -> Result<BenchLearner, CliError> {
    let base = cfg.model_spec()?;
    let spec = match name {
        "km" => ModelSpec::new(ReductionKind::Km, LearnerSpec::glm()),
        "ph-glm" => ModelSpec {
            reduction: ReductionKind::Pem,
            learner: cfg.learner(LearnerName::Glm),
            formula: Some(". + interval".into()),
            ..base
        },
        _ => {
            let (reduction, learner) = name
                .split_once('-')
                .ok_or_else(|| CliError::Config(format!("unknown learner preset `{}`", name)))?;
            let reduction: ReductionKind = serde_json::from_value(serde_json::Value::String(reduction.into()))
                .map_err(|_| CliError::Config(format!("unknown reduction in learner preset `{}`", name)))?;
            let learner: LearnerName = serde_json::from_value(serde_json::Value::String(learner.into()))
                .map_err(|_| CliError::Config(format!("unknown learner in learner preset `{}`", name)))?;
            if reduction == ReductionKind::Km {
                return Err(CliError::Config(format!("unknown learner preset `{}`; use `km`", name)));
            }
            ModelSpec {
                reduction,
                learner: cfg.learner(learner),
                formula: None,
                ..base
            }
        }
    };
    Ok(BenchLearner {
        name: name.into(),
        space: space_for(cfg, &spec),
        spec,
    })
}

fn bench_task(cfg: &RunConfig, name: &str, index: usize) -> Result<SurvivalTask, CliError> {
    let scenario = match name {
        "synthetic-breakpoint" => Some("breakpoint"),
        "synthetic-tve" => Some("tve"),
        _ => None,
    };
    match scenario {
        Some(s) => {
            let sim = SimConfig {
                seed: cfg.seed.wrapping_add(index as u64),
                ..cfg.sim_config()
            };
            Ok(simulate(&Scenario::by_name(s)?, &sim)?)
        }
        None => load_task(cfg, Path::new(name)),
    }
}

pub fn benchmark_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.benchmark.tasks.is_empty() || cfg.benchmark.learners.is_empty() {
        return Err(CliError::Config("benchmark.tasks and benchmark.learners must not be empty".into()));
    }
    let learners = cfg
        .benchmark
        .learners
        .iter()
        .map(|l| preset(cfg, l))
        .collect::<Result<Vec<_>, _>>()?;
    let tasks = cfg
        .benchmark
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let name = if t.starts_with("synthetic-") { t.clone() } else { stem(Path::new(t)) };
            Ok((name, bench_task(cfg, t, i)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let table = benchmark(&tasks, &learners, &bench_config(cfg))?;
    write_scores(cfg, &table)
}

//! Synthetic single-event tasks with known hazards.
//!
//! Every scenario draws a standard-normal feature `x1` and a binary group
//! indicator `group`; event times are drawn by inverting the cumulative
//! hazard, and censoring times are uniform on `(0, c)` with `c` calibrated
//! so the expected censoring share matches the target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SurvivalTask};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("{0}")]
    BadParameter(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase", deny_unknown_fields)]
pub enum Scenario {
    /// `h(t|x) = rate * exp(beta_x1 x1 + beta_group group)`.
    Constant {
        rate: f64,
        beta_x1: f64,
        beta_group: f64,
    },
    /// Baseline `h1` before `breakpoint`, `h2` after, times
    /// `exp(beta_x1 x1 + beta_group group)`.
    Breakpoint {
        h1: f64,
        h2: f64,
        breakpoint: f64,
        beta_x1: f64,
        beta_group: f64,
    },
    /// `h(t|x) = h0 * exp(beta_x1 x1 + f(t) group)` with
    /// `f(t) = amplitude * sin(2 pi t / period + phase)`.
    Tve {
        h0: f64,
        amplitude: f64,
        period: f64,
        phase: f64,
        beta_x1: f64,
    },
}

impl Scenario {
    pub fn constant() -> Self {
        Scenario::Constant {
            rate: 1.0,
            beta_x1: 0.0,
            beta_group: 0.0,
        }
    }

    pub fn breakpoint() -> Self {
        Scenario::Breakpoint {
            h1: 0.2,
            h2: 1.0,
            breakpoint: 1.0,
            beta_x1: 0.8,
            beta_group: -0.7,
        }
    }

    pub fn tve() -> Self {
        Scenario::Tve {
            h0: 0.5,
            amplitude: 2.0,
            period: 4.0,
            phase: -std::f64::consts::FRAC_PI_2,
            beta_x1: 0.6,
        }
    }

    /// Default parameters for a scenario name.
    pub fn by_name(name: &str) -> Result<Self, SimulateError> {
        match name {
            "constant" => Ok(Self::constant()),
            "breakpoint" => Ok(Self::breakpoint()),
            "tve" => Ok(Self::tve()),
            other => Err(SimulateError::BadParameter(format!(
                "unknown scenario `{}` (expected constant, breakpoint or tve)",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Constant { .. } => "constant",
            Scenario::Breakpoint { .. } => "breakpoint",
            Scenario::Tve { .. } => "tve",
        }
    }

    /// Hazard at `t` for features `(x1, group)`.
    pub fn hazard(&self, t: f64, x1: f64, group: f64) -> f64 {
        match *self {
            Scenario::Constant { rate, beta_x1, beta_group } => rate * (beta_x1 * x1 + beta_group * group).exp(),
            Scenario::Breakpoint {
                h1,
                h2,
                breakpoint,
                beta_x1,
                beta_group,
            } => (if t < breakpoint { h1 } else { h2 }) * (beta_x1 * x1 + beta_group * group).exp(),
            Scenario::Tve {
                h0,
                amplitude,
                period,
                phase,
                beta_x1,
            } => h0 * (beta_x1 * x1 + tve_effect(amplitude, period, phase, t) * group).exp(),
        }
    }

    /// Event time with cumulative hazard `e`, or infinity if it is never
    /// reached.
    fn invert(&self, e: f64, x1: f64, group: f64) -> f64 {
        match *self {
            Scenario::Constant { .. } => e / self.hazard(0.0, x1, group),
            Scenario::Breakpoint { breakpoint, .. } => {
                let r1 = self.hazard(0.0, x1, group);
                let r2 = self.hazard(breakpoint, x1, group);
                if e <= r1 * breakpoint {
                    e / r1
                } else {
                    breakpoint + (e - r1 * breakpoint) / r2
                }
            }
            Scenario::Tve { period, .. } => {
                if group == 0.0 {
                    return e / self.hazard(0.0, x1, group);
                }
                invert_numeric(|t| self.hazard(t, x1, group), e, period / 64.0)
            }
        }
    }

    fn validate(&self) -> Result<(), SimulateError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimulateError::BadParameter(format!("{} must be positive, got {}", name, v)))
            }
        };
        match *self {
            Scenario::Constant { rate, .. } => positive("rate", rate),
            Scenario::Breakpoint { h1, h2, breakpoint, .. } => {
                positive("h1", h1)?;
                positive("h2", h2)?;
                positive("breakpoint", breakpoint)
            }
            Scenario::Tve { h0, period, .. } => {
                positive("h0", h0)?;
                positive("period", period)
            }
        }
    }
}

/// Time-varying group effect of the `tve` scenario.
pub fn tve_effect(amplitude: f64, period: f64, phase: f64, t: f64) -> f64 {
    amplitude * (2.0 * std::f64::consts::PI * t / period + phase).sin()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    // composite Simpson on 8 panels
    let n = 8;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Solves `int_0^t h = e` by marching in steps of `step` and bisecting in
/// the step that crosses `e`.
fn invert_numeric(h: impl Fn(f64) -> f64, e: f64, step: f64) -> f64 {
    const MAX_TIME: f64 = 1e6;
    let mut acc = 0.0;
    let mut t = 0.0;
    while t < MAX_TIME {
        let inc = simpson(&h, t, t + step);
        if acc + inc >= e {
            let (mut lo, mut hi) = (t, t + step);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if acc + simpson(&h, t, mid) < e {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        acc += inc;
        t += step;
    }
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    /// Target share of censored subjects, in `[0, 1)`.
    pub censoring_rate: f64,
    /// Administrative censoring time, if any.
    pub max_time: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            seed: 1,
            censoring_rate: 0.3,
            max_time: None,
        }
    }
}

/// Upper end `c` of the uniform censoring distribution giving an expected
/// censoring share of `rate`: the mean of `min(t_i, c) / c` equals `rate`.
fn calibrate_censoring(times: &[f64], rate: f64) -> f64 {
    let share = |c: f64| times.iter().map(|&t| t.min(c) / c).sum::<f64>() / times.len() as f64;
    let finite_max = times.iter().copied().filter(|t| t.is_finite()).fold(0.0, f64::max);
    let (mut lo, mut hi) = (1e-12, finite_max.max(1.0));
    while share(hi) > rate {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share(mid) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a task with features `x1` and `group`.
pub fn simulate(scenario: &Scenario, config: &SimConfig) -> Result<SurvivalTask, SimulateError> {
    scenario.validate()?;
    if config.n == 0 {
        return Err(SimulateError::BadParameter("n must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.censoring_rate) {
        return Err(SimulateError::BadParameter(format!(
            "censoring rate must lie in [0, 1), got {}",
            config.censoring_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut features = Vec::with_capacity(config.n);
    let mut event = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let x1: f64 = StandardNormal.sample(&mut rng);
        let group = f64::from(u8::from(rng.random_bool(0.5)));
        let u: f64 = rng.random();
        let e = -(1.0 - u).ln();
        event.push(scenario.invert(e, x1, group));
        features.push(vec![x1, group]);
    }
    let c = (config.censoring_rate > 0.0).then(|| calibrate_censoring(&event, config.censoring_rate));
    let mut times = Vec::with_capacity(config.n);
    let mut status = Vec::with_capacity(config.n);
    for &t in &event {
        let mut obs = t;
        let mut d = 1u8;
        if let Some(c) = c {
            let ci = rng.random::<f64>() * c;
            if ci < obs {
                obs = ci;
                d = 0;
            }
        }
        if let Some(m) = config.max_time {
            if obs > m {
                obs = m;
                d = 0;
            }
        }
        if !obs.is_finite() {
            return Err(SimulateError::BadParameter(
                "some event times are infinite; set max_time or a positive censoring rate".into(),
            ));
        }
        times.push(obs);
        status.push(d);
    }
    Ok(SurvivalTask::with_features(&times, &status, &["x1", "group"], &features)?)
}

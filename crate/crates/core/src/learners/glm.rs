//! Generalized linear models fitted by iteratively reweighted least squares
//! with an optional ridge penalty on the non-intercept coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::LearnerError;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PoissonLog,
    BinomialLogit,
    GaussianIdentity,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

impl Family {
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::PoissonLog => eta.exp(),
            Family::BinomialLogit => logistic(eta),
            Family::GaussianIdentity => eta,
        }
    }

    /// Unit deviance of one observation at linear predictor `eta`.
    pub fn unit_deviance(self, y: f64, eta: f64) -> f64 {
        match self {
            Family::PoissonLog => 2.0 * (xlogy(y, y) - y * eta - y + eta.exp()),
            Family::BinomialLogit => {
                // -log(mu) = softplus(-eta), -log(1-mu) = softplus(eta)
                2.0 * (xlogy(y, y)
                    + xlogy(1.0 - y, 1.0 - y)
                    + y * softplus(-eta)
                    + (1.0 - y) * softplus(eta))
            }
            Family::GaussianIdentity => (y - eta) * (y - eta),
        }
    }

    /// `d mu / d eta`, which for canonical links is also the variance weight.
    fn variance(self, mu: f64) -> f64 {
        match self {
            Family::PoissonLog => mu,
            Family::BinomialLogit => mu * (1.0 - mu),
            Family::GaussianIdentity => 1.0,
        }
    }

    fn check_response(self, y: f64) -> bool {
        match self {
            Family::PoissonLog => y.is_finite() && y >= 0.0,
            Family::BinomialLogit => (0.0..=1.0).contains(&y),
            Family::GaussianIdentity => y.is_finite(),
        }
    }

    fn start(self, mean: f64) -> f64 {
        match self {
            Family::PoissonLog => mean.max(1e-10).ln(),
            Family::BinomialLogit => {
                let m = mean.clamp(1e-10, 1.0 - 1e-10);
                (m / (1.0 - m)).ln()
            }
            Family::GaussianIdentity => mean,
        }
    }
}

/// A fitted GLM. `coefficients[0]` is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub deviance: f64,
    /// Penalized deviance after each accepted iteration.
    pub trace: Vec<f64>,
}

impl GlmFit {
    /// Linear predictor without offset.
    pub fn predict_link(&self, x: &DesignMatrix) -> Vec<f64> {
        (0..x.nrows)
            .map(|i| {
                let row = x.row(i);
                self.coefficients[0]
                    + row
                        .iter()
                        .zip(&self.coefficients[1..])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_response(&self, x: &DesignMatrix) -> Vec<f64> {
        self.predict_link(x)
            .into_iter()
            .map(|e| self.family.inverse_link(e))
            .collect()
    }
}

struct Problem<'a> {
    x: &'a DesignMatrix,
    y: &'a [f64],
    offset: Option<&'a [f64]>,
    weights: Option<&'a [f64]>,
    family: Family,
    lambda: f64,
}

impl Problem<'_> {
    fn w(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        let row = self.x.row(i);
        beta[0]
            + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>()
            + self.offset.map_or(0.0, |o| o[i])
    }

    fn deviance(&self, beta: &[f64]) -> f64 {
        (0..self.x.nrows)
            .map(|i| {
                let w = self.w(i);
                if w == 0.0 {
                    0.0
                } else {
                    w * self.family.unit_deviance(self.y[i], self.eta(beta, i))
                }
            })
            .sum()
    }

    fn penalty(&self, beta: &[f64]) -> f64 {
        self.lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    /// Newton system `(X'WX + lambda I_-0) delta = X'w(y - mu) - lambda beta_-0`.
    fn newton_system(&self, beta: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.x.ncols() + 1;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        let mut z = vec![0.0; p];
        z[0] = 1.0;
        for i in 0..self.x.nrows {
            let w = self.w(i);
            if w == 0.0 {
                continue;
            }
            z[1..].copy_from_slice(self.x.row(i));
            let mu = self.family.inverse_link(self.eta(beta, i));
            let v = w * self.family.variance(mu);
            let r = w * (self.y[i] - mu);
            for a in 0..p {
                if z[a] == 0.0 {
                    continue;
                }
                g[a] += z[a] * r;
                let za = z[a] * v;
                for b in a..p {
                    h[(a, b)] += za * z[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for a in 1..p {
            h[(a, a)] += self.lambda;
            g[a] -= self.lambda * beta[a];
        }
        (h, g)
    }

    /// Penalized score `X'w(y - mu) - lambda beta`, intercept unpenalized.
    fn score(&self, beta: &[f64]) -> Vec<f64> {
        self.newton_system(beta).1.iter().cloned().collect()
    }
}

/// Penalized score of `fit` on the given data; zero at an exact optimum.
pub fn glm_score(
    fit: &GlmFit,
    x: &DesignMatrix,
    y: &[f64],
    offset: Option<&[f64]>,
    weights: Option<&[f64]>,
) -> Vec<f64> {
    Problem {
        x,
        y,
        offset,
        weights,
        family: fit.family,
        lambda: fit.lambda,
    }
    .score(&fit.coefficients)
}

/// Unpenalized deviance of arbitrary coefficients on the given data.
pub fn glm_deviance(
    family: Family,
    beta: &[f64],
    x: &DesignMatrix,
    y: &[f64],
    offset: Option<&[f64]>,
    weights: Option<&[f64]>,
) -> f64 {
    Problem {
        x,
        y,
        offset,
        weights,
        family,
        lambda: 0.0,
    }
    .deviance(beta)
}

/// Fits a GLM by IRLS (Newton–Raphson for the canonical links) with
/// step-halving, so the penalized deviance never increases. Converges when
/// the relative change in penalized deviance drops below 1e-10, followed by
/// one polishing Newton step.
pub fn fit_glm(
    x: &DesignMatrix,
    y: &[f64],
    offset: Option<&[f64]>,
    weights: Option<&[f64]>,
    family: Family,
    lambda: f64,
) -> Result<GlmFit, LearnerError> {
    let n = x.nrows;
    if y.len() != n
        || offset.is_some_and(|o| o.len() != n)
        || weights.is_some_and(|w| w.len() != n)
    {
        return Err(LearnerError::LengthMismatch);
    }
    if n == 0 {
        return Err(LearnerError::EmptyData);
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(LearnerError::BadParameter(format!("ridge lambda must be >= 0, got {}", lambda)));
    }
    if let Some(i) = y.iter().position(|&v| !family.check_response(v)) {
        return Err(LearnerError::BadResponse(format!(
            "response {} at row {} is invalid for family {:?}",
            y[i],
            i + 1,
            family
        )));
    }
    if weights.is_some_and(|w| w.iter().any(|v| !(v.is_finite() && *v >= 0.0))) {
        return Err(LearnerError::BadResponse("weights must be finite and non-negative".into()));
    }
    if offset.is_some_and(|o| o.iter().any(|v| !v.is_finite())) {
        return Err(LearnerError::BadResponse("offsets must be finite".into()));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::BadResponse("design matrix has non-finite entries".into()));
    }
    let prob = Problem {
        x,
        y,
        offset,
        weights,
        family,
        lambda,
    };
    let wsum: f64 = (0..n).map(|i| prob.w(i)).sum();
    if wsum <= 0.0 {
        return Err(LearnerError::EmptyData);
    }

    let p = x.ncols() + 1;
    let mut beta = vec![0.0; p];
    let mean = match family {
        Family::PoissonLog => {
            let num: f64 = (0..n).map(|i| prob.w(i) * y[i]).sum();
            let den: f64 = (0..n)
                .map(|i| prob.w(i) * offset.map_or(1.0, |o| o[i].exp()))
                .sum();
            num / den
        }
        _ => {
            let off: f64 = (0..n).map(|i| prob.w(i) * offset.map_or(0.0, |o| o[i])).sum::<f64>();
            let m = (0..n).map(|i| prob.w(i) * y[i]).sum::<f64>() / wsum;
            if family == Family::GaussianIdentity {
                m - off / wsum
            } else {
                m
            }
        }
    };
    beta[0] = family.start(mean);

    let objective = |b: &[f64]| prob.deviance(b) + prob.penalty(b);
    let mut current = objective(&beta);
    let mut trace = vec![current];
    let mut converged = false;
    let mut polished = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        let (h, g) = prob.newton_system(&beta);
        let diag: Vec<f64> = (0..p).map(|a| h[(a, a)]).collect();
        let strict = h.clone().cholesky().filter(|c| {
            let l = c.l_dirty();
            (0..p).all(|a| l[(a, a)] * l[(a, a)] > 1e-11 * diag[a].max(f64::MIN_POSITIVE))
        });
        // Past the first iteration a near-singular system comes from weights
        // vanishing in separated cells, not from the design; damp it.
        let chol = match strict {
            Some(c) => Some(c),
            None if iterations > 1 => {
                let scale = diag.iter().fold(0.0f64, |m, d| m.max(*d)).max(f64::MIN_POSITIVE);
                let mut damped = h;
                for a in 0..p {
                    damped[(a, a)] += 1e-9 * scale;
                }
                damped.cholesky()
            }
            None => None,
        };
        let Some(chol) = chol else {
            if lambda == 0.0 {
                return Err(LearnerError::Singular(
                    "normal equations are singular; use a ridge penalty lambda > 0".into(),
                ));
            }
            return Err(LearnerError::Singular("normal equations are not positive definite".into()));
        };
        let delta = chol.solve(&g);
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(LearnerError::Singular(
                "Newton step is not finite; use a ridge penalty lambda > 0".into(),
            ));
        }
        let mut step = 1.0;
        let mut candidate: Vec<f64>;
        let mut value;
        loop {
            candidate = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            value = objective(&candidate);
            if value.is_finite() && value <= current * (1.0 + 1e-14) + 1e-300 {
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                value = current;
                candidate = beta.clone();
                break;
            }
        }
        let change = (current - value).abs() / (value.abs() + 0.1);
        beta = candidate;
        current = value.min(current);
        trace.push(current);
        if polished {
            converged = true;
            break;
        }
        if change < TOL {
            polished = true;
        }
    }
    if !converged && !polished {
        return Err(LearnerError::NotConverged {
            iterations,
            deviance: current,
            coefficients: beta,
        });
    }
    Ok(GlmFit {
        family,
        names: x.names.clone(),
        deviance: prob.deviance(&beta),
        coefficients: beta,
        lambda,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn poisson_intercept_is_occurrence_rate() {
        let x = DesignMatrix::empty(3);
        let off = [0.5f64.ln(), 0.5f64.ln(), 0.0];
        let fit = fit_glm(&x, &[1.0, 0.0, 1.0], Some(&off), None, Family::PoissonLog, 0.0).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.predict_response(&x)[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn logistic_intercept_is_logit_of_mean() {
        let x = DesignMatrix::empty(4);
        let fit = fit_glm(&x, &[1.0, 0.0, 0.0, 0.0], None, None, Family::BinomialLogit, 0.0).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], (1.0f64 / 3.0).ln(), epsilon = 1e-10);
    }

    #[test]
    fn zero_weight_equals_row_removal() {
        let x = DesignMatrix::new(vec!["x".into()], 5, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = [0.0, 1.0, 0.0, 1.0, 1.0];
        let w = [1.0, 0.0, 1.0, 1.0, 0.0];
        let a = fit_glm(&x, &y, None, Some(&w), Family::BinomialLogit, 0.0).unwrap();
        let keep = [0, 2, 3];
        let xs = x.select_rows(&keep);
        let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let b = fit_glm(&xs, &ys, None, None, Family::BinomialLogit, 0.0).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn gaussian_matches_least_squares() {
        let x = DesignMatrix::new(vec!["x".into()], 4, vec![1.0, 2.0, 3.0, 4.0]);
        let fit = fit_glm(&x, &[3.0, 5.0, 7.0, 9.0], None, None, Family::GaussianIdentity, 0.0).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.coefficients[1], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn ridge_shrinks_slope_not_intercept() {
        let x = DesignMatrix::new(vec!["x".into()], 4, vec![-1.5, -0.5, 0.5, 1.5]);
        let y = [0.0, 1.0, 2.0, 3.0];
        let fit = fit_glm(&x, &y, None, None, Family::GaussianIdentity, 5.0).unwrap();
        // centered x: slope = sxy / (sxx + lambda)
        assert_abs_diff_eq!(fit.coefficients[1], 5.0 / 10.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.coefficients[0], 1.5, epsilon = 1e-10);
    }

    #[test]
    fn collinear_design_without_ridge_is_singular() {
        let x = DesignMatrix::new(
            vec!["a".into(), "b".into()],
            3,
            vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0],
        );
        let err = fit_glm(&x, &[1.0, 2.0, 3.0], None, None, Family::GaussianIdentity, 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"), "{err}");
        assert!(fit_glm(&x, &[1.0, 2.0, 3.0], None, None, Family::GaussianIdentity, 0.1).is_ok());
    }

    #[test]
    fn invalid_responses_rejected() {
        let x = DesignMatrix::empty(2);
        assert!(fit_glm(&x, &[-1.0, 1.0], None, None, Family::PoissonLog, 0.0).is_err());
        assert!(fit_glm(&x, &[2.0, 1.0], None, None, Family::BinomialLogit, 0.0).is_err());
        assert!(fit_glm(&x, &[1.0], None, None, Family::GaussianIdentity, 0.0).is_err());
    }

    #[test]
    fn trace_is_non_increasing() {
        let x = DesignMatrix::new(vec!["x".into()], 6, vec![0.1, 0.5, 1.0, 1.4, 2.0, 3.0]);
        let y = [0.0, 2.0, 1.0, 4.0, 3.0, 9.0];
        let fit = fit_glm(&x, &y, None, None, Family::PoissonLog, 0.0).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn link_prediction_ignores_offset() {
        let x = DesignMatrix::empty(2);
        let fit = GlmFit {
            family: Family::PoissonLog,
            names: vec![],
            coefficients: vec![0.5],
            lambda: 0.0,
            iterations: 0,
            deviance: 0.0,
            trace: vec![],
        };
        assert_eq!(fit.predict_link(&x), vec![0.5, 0.5]);
    }
}

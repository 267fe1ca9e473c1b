use nalgebra::{DMatrix, DVector};

use super::linalg::solve_spd;
use super::special::{sigmoid, softplus};
use crate::data::DesignMatrix;
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const DEV_TOL: f64 = 1e-10;
const DECREMENT_TOL: f64 = 1e-10;
const SEPARATION_NORM: f64 = 1e4;
const PROB_CLAMP: f64 = 1e-12;

/// A fitted logistic regression.
#[derive(Clone, Debug, PartialEq)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub labels: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Columns that were identically zero on the fitting rows; their
    /// coefficients are fixed at 0.
    pub aliased: Vec<usize>,
}

impl GlmFit {
    /// A fit with given coefficients, for evaluation only.
    pub fn from_coefficients(coefficients: Vec<f64>) -> GlmFit {
        GlmFit {
            labels: (0..coefficients.len()).map(|j| format!("b{j}")).collect(),
            coefficients,
            converged: true,
            iterations: 0,
            deviance: f64::NAN,
            aliased: Vec::new(),
        }
    }

    pub fn linear_predictor(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                found: row.len(),
            });
        }
        Ok(dot(row, &self.coefficients))
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|j| self.coefficients[j])
    }
}

/// Inverse-logit of the linear predictor, clamped to [1e-12, 1 − 1e-12].
pub fn predict_prob(fit: &GlmFit, row: &[f64]) -> Result<f64> {
    Ok(sigmoid(fit.linear_predictor(row)?).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_inputs(design: &DesignMatrix, y: &[u8], weights: Option<&[f64]>) -> Result<()> {
    if y.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            found: y.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: w.len(),
            });
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::NonBinaryField {
            row: y.iter().position(|&v| v > 1).unwrap(),
            column: "response".into(),
        });
    }
    Ok(())
}

/// Weighted Bernoulli log-likelihood at `beta`.
pub fn logistic_log_likelihood(design: &DesignMatrix, y: &[u8], weights: Option<&[f64]>, beta: &[f64]) -> f64 {
    (0..design.nrows())
        .map(|i| {
            let w = weights.map_or(1.0, |w| w[i]);
            let eta = dot(design.row(i), beta);
            let ll = if y[i] == 1 { -softplus(-eta) } else { -softplus(eta) };
            w * ll
        })
        .sum()
}

/// Analytic score X'W(y − μ).
pub fn logistic_gradient(design: &DesignMatrix, y: &[u8], weights: Option<&[f64]>, beta: &[f64]) -> Vec<f64> {
    let p = design.ncols();
    let mut g = vec![0.0; p];
    for i in 0..design.nrows() {
        let w = weights.map_or(1.0, |w| w[i]);
        let row = design.row(i);
        let resid = w * (y[i] as f64 - sigmoid(dot(row, beta)));
        for j in 0..p {
            g[j] += resid * row[j];
        }
    }
    g
}

/// Maximum-likelihood logistic regression by Newton–Raphson (IRLS) with
/// step-halving, started from zero.
pub fn fit_logistic(design: &DesignMatrix, y: &[u8], weights: Option<&[f64]>) -> Result<GlmFit> {
    check_inputs(design, y, weights)?;
    let n = design.nrows();
    let p = design.ncols();
    let w_of = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut seen0, mut seen1) = (false, false);
    for i in 0..n {
        if w_of(i) > 0.0 {
            if y[i] == 1 {
                seen1 = true
            } else {
                seen0 = true
            }
        }
    }
    if !(seen0 && seen1) {
        return Err(Error::AllSameResponse);
    }
    let aliased: Vec<usize> = (0..p)
        .filter(|&j| (0..n).all(|i| w_of(i) == 0.0 || design.row(i)[j] == 0.0))
        .collect();
    let active: Vec<usize> = (0..p).filter(|j| !aliased.contains(j)).collect();
    let k = active.len();

    let deviance = |beta: &[f64]| -2.0 * logistic_log_likelihood(design, y, weights, beta);
    let mut beta = vec![0.0; p];
    let mut dev = deviance(&beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut g = DVector::<f64>::zeros(k);
        for i in 0..n {
            let w = w_of(i);
            if w == 0.0 {
                continue;
            }
            let row = design.row(i);
            let mu = sigmoid(dot(row, &beta));
            let v = w * mu * (1.0 - mu);
            let resid = w * (y[i] as f64 - mu);
            for (a, &ja) in active.iter().enumerate() {
                g[a] += resid * row[ja];
                let va = v * row[ja];
                for (b, &jb) in active.iter().enumerate().take(a + 1) {
                    h[(a, b)] += va * row[jb];
                }
            }
        }
        if g.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        let step = solve_spd(&h, &g).ok_or(Error::SingularWeightedSystem)?;
        // Newton decrement: the predicted deviance gain of a full step. Once it
        // falls below what the deviance can resolve, the line search is blind,
        // so take one plain Newton step and stop.
        if g.dot(&step) <= DECREMENT_TOL * (1.0 + dev.abs()) {
            for (a, &j) in active.iter().enumerate() {
                beta[j] += step[a];
            }
            dev = deviance(&beta);
            iterations += 1;
            converged = true;
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand = beta.clone();
            for (a, &j) in active.iter().enumerate() {
                cand[j] += t * step[a];
            }
            let d = deviance(&cand);
            if d.is_finite() && d <= dev {
                accepted = Some((cand, d));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, d)) = accepted else {
            break;
        };
        let norm = cand.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM || d < 1e-8 {
            return Err(Error::Separation { norm });
        }
        let change = dev - d;
        beta = cand;
        dev = d;
        if change.abs() < DEV_TOL {
            let g = logistic_gradient(design, y, weights, &beta);
            if g.iter().all(|v| v.abs() <= GRAD_TOL) {
                converged = true;
                break;
            }
        }
    }
    Ok(GlmFit {
        coefficients: beta,
        labels: design.labels().to_vec(),
        converged,
        iterations,
        deviance: dev,
        aliased,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_balanced() {
        let y = vec![0u8, 1, 0, 1];
        let ones = vec![1.0; 4];
        let dm = DesignMatrix::from_columns(&[("(intercept)", &ones)]).unwrap();
        let fit = fit_logistic(&dm, &y, None).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert_eq!(predict_prob(&fit, &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn all_same_response() {
        let ones = vec![1.0; 3];
        let dm = DesignMatrix::from_columns(&[("(intercept)", &ones)]).unwrap();
        assert!(matches!(fit_logistic(&dm, &[0, 0, 0], None), Err(Error::AllSameResponse)));
    }

    #[test]
    fn separation_detected() {
        let x = vec![-2.0, -1.0, 1.0, 2.0];
        let dm = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        assert!(matches!(fit_logistic(&dm, &[0, 0, 1, 1], None), Err(Error::Separation { .. })));
    }

    #[test]
    fn prediction_examples() {
        let f = GlmFit::from_coefficients(vec![-2.5, 1.0]);
        assert_eq!(predict_prob(&f, &[1.0, 2.5]).unwrap(), 0.5);
        let f = GlmFit::from_coefficients(vec![0.0, 1.0]);
        assert!((predict_prob(&f, &[1.0, 1.1]).unwrap() - 0.7503).abs() < 1e-4);
        assert!(matches!(predict_prob(&f, &[1.0]), Err(Error::DimensionMismatch { .. })));
        let f = GlmFit::from_coefficients(vec![0.0, 900.0]);
        assert_eq!(predict_prob(&f, &[1.0, 1.0]).unwrap(), 1.0 - 1e-12);
    }

    #[test]
    fn zero_column_is_aliased() {
        let x = vec![0.5, -0.3, 1.2, -1.0, 0.1, 0.7];
        let z = vec![0.0; 6];
        let dm = DesignMatrix::with_intercept(&[("x", &x), ("z", &z)]).unwrap();
        let fit = fit_logistic(&dm, &[0, 1, 1, 0, 0, 1], None).unwrap();
        assert_eq!(fit.aliased, vec![2]);
        assert_eq!(fit.coefficients[2], 0.0);
        assert!(fit.converged);
    }
}

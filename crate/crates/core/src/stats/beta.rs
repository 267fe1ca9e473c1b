//! Beta regression with a logit mean link and constant precision φ.
//!
//! Parameters are (β, θ) with θ = ln φ. The fit maximizes the log-likelihood
//! by Newton ascent on the analytic Hessian with a small ridge.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

use super::linalg::solve_spd;
use super::ols::ols_coefficients;
use super::special::{logit, sigmoid, trigamma};
use crate::data::DesignMatrix;
use crate::error::{Error, Result};

const CLAMP: f64 = 1e-6;
const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-6;
const RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct BetaFit {
    pub coefficients: Vec<f64>,
    pub phi: f64,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl BetaFit {
    pub fn mean(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                found: row.len(),
            });
        }
        Ok(sigmoid(row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()))
    }

    /// Beta density at `r` (clamped into (0, 1)) for covariate row `row`.
    pub fn density(&self, row: &[f64], r: f64) -> Result<f64> {
        let mu = self.mean(row)?;
        Ok(beta_log_density(r.clamp(CLAMP, 1.0 - CLAMP), mu, self.phi).exp())
    }
}

fn beta_log_density(y: f64, mu: f64, phi: f64) -> f64 {
    let a = mu * phi;
    let b = (1.0 - mu) * phi;
    ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()
}

fn clamp_response(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v.clamp(CLAMP, 1.0 - CLAMP)).collect()
}

/// Log-likelihood at `params = [β..., ln φ]`. Responses are clamped into
/// [1e-6, 1 − 1e-6].
pub fn beta_log_likelihood(design: &DesignMatrix, y: &[f64], params: &[f64]) -> f64 {
    let p = design.ncols();
    let phi = params[p].exp();
    (0..design.nrows())
        .map(|i| {
            let eta: f64 = design.row(i).iter().zip(&params[..p]).map(|(a, b)| a * b).sum();
            beta_log_density(y[i].clamp(CLAMP, 1.0 - CLAMP), sigmoid(eta), phi)
        })
        .sum()
}

/// Analytic score with respect to `[β..., ln φ]`.
pub fn beta_score(design: &DesignMatrix, y: &[f64], params: &[f64]) -> Vec<f64> {
    derivatives(design, &clamp_response(y), params, false).1
}

/// (log-likelihood, score, Hessian if requested)
fn derivatives(design: &DesignMatrix, y: &[f64], params: &[f64], hessian: bool) -> (f64, Vec<f64>, DMatrix<f64>) {
    let p = design.ncols();
    let phi = params[p].exp();
    let (psi_phi, tri_phi) = (digamma(phi), if hessian { trigamma(phi) } else { 0.0 });
    let mut ll = 0.0;
    let mut g = vec![0.0; p + 1];
    let mut h = DMatrix::<f64>::zeros(if hessian { p + 1 } else { 0 }, if hessian { p + 1 } else { 0 });
    for i in 0..design.nrows() {
        let row = design.row(i);
        let eta: f64 = row.iter().zip(&params[..p]).map(|(a, b)| a * b).sum();
        let mu = sigmoid(eta);
        let a = mu * phi;
        let b = (1.0 - mu) * phi;
        let (ly, l1y) = (y[i].ln(), (1.0 - y[i]).ln());
        ll += ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * ly + (b - 1.0) * l1y;
        let (psi_a, psi_b) = (digamma(a), digamma(b));
        let ystar = ly - l1y;
        let mustar = psi_a - psi_b;
        let dmu_deta = mu * (1.0 - mu);
        // ∂ℓ/∂μ and ∂ℓ/∂φ
        let l_mu = phi * (ystar - mustar);
        let l_phi = mu * (ystar - mustar) + l1y - psi_b + psi_phi;
        let l_eta = l_mu * dmu_deta;
        for j in 0..p {
            g[j] += l_eta * row[j];
        }
        g[p] += phi * l_phi;
        if hessian {
            let (ta, tb) = (trigamma(a), trigamma(b));
            let l_mumu = -phi * phi * (ta + tb);
            let l_etaeta = l_mumu * dmu_deta * dmu_deta + l_mu * dmu_deta * (1.0 - 2.0 * mu);
            let l_muphi = (ystar - mustar) + phi * (-ta * mu + tb * (1.0 - mu));
            let l_etatheta = phi * dmu_deta * l_muphi;
            let l_phiphi = tri_phi - mu * mu * ta - (1.0 - mu) * (1.0 - mu) * tb;
            let l_thth = phi * phi * l_phiphi + phi * l_phi;
            for j in 0..p {
                for k in 0..=j {
                    h[(j, k)] += l_etaeta * row[j] * row[k];
                }
                h[(p, j)] += l_etatheta * row[j];
            }
            h[(p, p)] += l_thth;
        }
    }
    if hessian {
        for j in 0..=p {
            for k in 0..j {
                h[(k, j)] = h[(j, k)];
            }
        }
    }
    (ll, g, h)
}

/// Maximum-likelihood beta regression. Starts from OLS on logit(y) with a
/// moment estimate of φ.
pub fn fit_beta_regression(design: &DesignMatrix, response: &[f64]) -> Result<BetaFit> {
    if response.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            found: response.len(),
        });
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("beta regression response must be finite".into()));
    }
    let y = clamp_response(response);
    let p = design.ncols();
    let z: Vec<f64> = y.iter().map(|&v| logit(v)).collect();
    let beta0 = ols_coefficients(design, &z)?;
    let fitted: Vec<f64> = (0..design.nrows())
        .map(|i| sigmoid(design.row(i).iter().zip(&beta0).map(|(a, b)| a * b).sum()))
        .collect();
    let n = y.len() as f64;
    let resid_var = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let mean_var = fitted.iter().map(|m| m * (1.0 - m)).sum::<f64>() / n;
    let phi0 = (mean_var / resid_var.max(1e-12) - 1.0).clamp(1.0, 1e6);
    let mut params = beta0;
    params.push(phi0.ln());

    let (mut ll, mut g, mut h) = derivatives(design, &y, &params, true);
    for iter in 1..=MAX_ITER {
        if g.iter().all(|v| v.abs() <= GRAD_TOL) {
            return Ok(BetaFit {
                coefficients: params[..p].to_vec(),
                phi: params[p].exp(),
                converged: true,
                iterations: iter - 1,
                log_likelihood: ll,
            });
        }
        let gv = DVector::from_vec(g.clone());
        let mut ridge = RIDGE;
        let step = loop {
            let mut a = -h.clone();
            for j in 0..=p {
                a[(j, j)] += ridge * (1.0 + a[(j, j)].abs());
            }
            if let Some(s) = solve_spd(&a, &gv) {
                break s;
            }
            ridge *= 10.0;
            if ridge > 1e12 {
                return Err(Error::NonConvergence { iterations: iter });
            }
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let cand_ll = beta_log_likelihood(design, &y, &cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                params = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Err(Error::NonConvergence { iterations: iter });
        }
        (ll, g, h) = derivatives(design, &y, &params, true);
    }
    Err(Error::NonConvergence { iterations: MAX_ITER })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_intercept_only() {
        let y = vec![0.2, 0.8, 0.3, 0.7, 0.45, 0.55];
        let ones = vec![1.0; y.len()];
        let dm = DesignMatrix::from_columns(&[("(intercept)", &ones)]).unwrap();
        let fit = fit_beta_regression(&dm, &y).unwrap();
        assert!((fit.mean(&[1.0]).unwrap() - 0.5).abs() < 1e-3);
        assert!(fit.phi > 0.0 && fit.converged);
    }

    #[test]
    fn exact_zero_is_clamped() {
        let y = vec![0.0, 0.3, 0.5, 0.6, 0.2, 0.4];
        let ones = vec![1.0; y.len()];
        let dm = DesignMatrix::from_columns(&[("(intercept)", &ones)]).unwrap();
        assert!(fit_beta_regression(&dm, &y).is_ok());
    }

    #[test]
    fn density_integrates_to_one() {
        let fit = BetaFit {
            coefficients: vec![0.3],
            phi: 7.0,
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
        };
        let m = 20000;
        let s: f64 = (0..m)
            .map(|k| fit.density(&[1.0], (k as f64 + 0.5) / m as f64).unwrap() / m as f64)
            .sum();
        assert!((s - 1.0).abs() < 1e-4, "{s}");
    }
}

//! Regression and kernel primitives shared by every estimator.

mod beta;
mod kernel;
mod linalg;
mod logistic;
mod ols;
mod special;

pub use beta::{beta_log_likelihood, beta_score, fit_beta_regression, BetaFit};
pub use kernel::{
    kde, kernel_smooth, quantile_sorted, rule_of_thumb_bandwidth, rule_of_thumb_weighted, weighted_kde, KernelFamily, KernelSpec,
    WeightedSample, T2_AT_ZERO,
};
pub use logistic::{fit_logistic, logistic_gradient, logistic_log_likelihood, predict_prob, GlmFit};
pub use ols::{ols_coefficients, ols_residuals};
pub use special::{logit, sigmoid, trigamma};

/// Arithmetic mean and population standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Weighted mean and population standard deviation.
pub fn weighted_mean_sd(v: &[f64], w: &[f64]) -> (f64, f64) {
    let total: f64 = w.iter().sum();
    let mean = v.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = v.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total;
    (mean, var.max(0.0).sqrt())
}

use nalgebra::{DMatrix, DVector};

use super::linalg::solve_spd;
use crate::data::DesignMatrix;
use crate::error::{Error, Result};

fn cross_products(design: &DesignMatrix, y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = design.ncols();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for i in 0..design.nrows() {
        let row = design.row(i);
        for a in 0..p {
            xty[a] += row[a] * y[i];
            for b in 0..=a {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    (xtx, xty)
}

fn residuals_for(design: &DesignMatrix, y: &[f64], beta: &[f64]) -> Vec<f64> {
    (0..design.nrows())
        .map(|i| y[i] - design.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Least-squares coefficients via the normal equations, with one step of
/// iterative refinement on the residual.
pub fn ols_coefficients(design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            found: y.len(),
        });
    }
    if design.nrows() < design.ncols() {
        return Err(Error::RankDeficient);
    }
    let (xtx, xty) = cross_products(design, y);
    let beta = solve_spd(&xtx, &xty).ok_or(Error::RankDeficient)?;
    let mut beta: Vec<f64> = beta.iter().copied().collect();
    let resid = residuals_for(design, y, &beta);
    let (_, xtr) = cross_products(design, &resid);
    if let Some(delta) = solve_spd(&xtx, &xtr) {
        for (b, d) in beta.iter_mut().zip(delta.iter()) {
            *b += d;
        }
    }
    Ok(beta)
}

/// Residuals of `y` after projection on the design columns.
pub fn ols_residuals(design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let beta = ols_coefficients(design, y)?;
    Ok(residuals_for(design, y, &beta))
}

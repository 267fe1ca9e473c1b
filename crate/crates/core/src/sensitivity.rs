//! Sensitivity of marginal estimates to unmeasured confounding and to shifts
//! in the covariate distribution.
//!
//! If ξ(r, x) relates the plug-in estimand to the truth, Ψ* = Ψ ξ, the bias of
//! a marginal estimate is
//!
//! ```text
//! E(Ψ − Ψ*) = −ρ sd(Ψ) sd(ξ) + E(Ψ)(1 − E(ξ))
//! ```
//!
//! with ρ = Corr(Ψ, ξ). Fixing |ρ| = 1 gives a conservative bound in terms of
//! the mean and standard deviation of ξ alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DesignMatrix, EncounterTable};
use crate::error::{Error, Result};
use crate::rap::CurveEstimate;
use crate::stats::{fit_logistic, mean_sd, predict_prob, GlmFit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub mean_xi: f64,
    pub sd_xi: f64,
    /// Corr(Ψ, ξ); `None` takes the worse of ±1.
    pub rho: Option<f64>,
}

impl SensitivityParams {
    pub fn new(mean_xi: f64, sd_xi: f64, rho: Option<f64>) -> Result<SensitivityParams> {
        let p = SensitivityParams { mean_xi, sd_xi, rho };
        p.validate()?;
        Ok(p)
    }

    /// ξ ≡ 1.
    pub fn null() -> SensitivityParams {
        SensitivityParams {
            mean_xi: 1.0,
            sd_xi: 0.0,
            rho: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_xi > 0.0) || !self.mean_xi.is_finite() {
            return Err(Error::InvalidArgument(format!("mean_xi must be positive, got {}", self.mean_xi)));
        }
        if !(self.sd_xi >= 0.0) || !self.sd_xi.is_finite() {
            return Err(Error::InvalidArgument(format!("sd_xi must be nonnegative, got {}", self.sd_xi)));
        }
        if let Some(rho) = self.rho {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!("rho must lie in [-1, 1], got {rho}")));
            }
        }
        Ok(())
    }
}

/// −ρ sd(Ψ) sd(ξ) + E(Ψ)(1 − E(ξ)) at a fixed ρ.
pub fn bias_at(mean_psi: f64, sd_psi: f64, mean_xi: f64, sd_xi: f64, rho: f64) -> f64 {
    -rho * sd_psi * sd_xi + mean_psi * (1.0 - mean_xi)
}

/// Bias of the marginal estimate. Without ρ both signs are evaluated and the
/// one with the larger magnitude is returned (ρ aligned against 1 − E ξ).
pub fn bias_bound(mean_psi: f64, sd_psi: f64, params: &SensitivityParams) -> f64 {
    match params.rho {
        Some(rho) => bias_at(mean_psi, sd_psi, params.mean_xi, params.sd_xi, rho),
        None => {
            let up = bias_at(mean_psi, sd_psi, params.mean_xi, params.sd_xi, 1.0);
            let down = bias_at(mean_psi, sd_psi, params.mean_xi, params.sd_xi, -1.0);
            if down.abs() >= up.abs() {
                down
            } else {
                up
            }
        }
    }
}

/// Largest |bias| the parameters allow.
pub fn max_abs_bias(mean_psi: f64, sd_psi: f64, params: &SensitivityParams) -> f64 {
    bias_bound(mean_psi, sd_psi, params).abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsSchedule {
    Global(SensitivityParams),
    /// One entry per grid point of the curve.
    PerPoint(Vec<SensitivityParams>),
}

impl ParamsSchedule {
    fn at(&self, k: usize) -> &SensitivityParams {
        match self {
            ParamsSchedule::Global(p) => p,
            ParamsSchedule::PerPoint(v) => &v[k],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundedCurve {
    pub curve: CurveEstimate,
    pub max_bias: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Estimate ± max |bias| at each grid point, using the curve's mean and
/// spread of Ψ(r, X). At r0, ξ ≡ 1 and the band is [1, 1].
pub fn bound_curve(curve: &CurveEstimate, schedule: &ParamsSchedule) -> Result<BoundedCurve> {
    let n = curve.r.len();
    if let ParamsSchedule::PerPoint(v) = schedule {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    let mut max_bias = Vec::with_capacity(n);
    let (mut lo, mut hi) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let p = schedule.at(k);
        p.validate()?;
        if curve.r[k] == curve.r0 {
            max_bias.push(0.0);
            lo.push(1.0);
            hi.push(1.0);
            continue;
        }
        let b = max_abs_bias(curve.estimate[k], curve.spread[k], p);
        max_bias.push(b);
        lo.push(curve.estimate[k] - b);
        hi.push(curve.estimate[k] + b);
    }
    Ok(BoundedCurve {
        curve: curve.clone(),
        max_bias,
        lo,
        hi,
    })
}

/// Worst-case bias over a grid of (|E ξ − 1|, sd ξ) at one curve point.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasContour {
    pub mean_dev: Vec<f64>,
    pub sd: Vec<f64>,
    /// `max_bias[i][j]` at (`mean_dev[i]`, `sd[j]`).
    pub max_bias: Vec<Vec<f64>>,
    /// |Ψ̄ − 1|: bias at or beyond this level can explain away the estimate.
    pub threshold: f64,
    pub explains_away: Vec<Vec<bool>>,
}

impl BiasContour {
    /// Smallest mean deviation that explains away the estimate at each sd, if any.
    pub fn frontier(&self) -> Vec<Option<f64>> {
        (0..self.sd.len())
            .map(|j| {
                (0..self.mean_dev.len())
                    .find(|&i| self.explains_away[i][j])
                    .map(|i| self.mean_dev[i])
            })
            .collect()
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

/// Cell value E Ψ · δ + sd Ψ · s, the bias magnitude with ρ at its worst sign.
pub fn contour_grid(psi_bar: f64, sd_psi: f64, mean_range: (f64, f64), sd_range: (f64, f64), resolution: usize) -> Result<BiasContour> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("contour resolution must be positive".into()));
    }
    for (name, (lo, hi)) in [("mean", mean_range), ("sd", sd_range)] {
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} range must satisfy 0 <= lo <= hi")));
        }
    }
    if !(sd_psi >= 0.0) {
        return Err(Error::InvalidArgument("sd of psi must be nonnegative".into()));
    }
    let mean_dev = linspace(mean_range.0, mean_range.1, resolution);
    let sd = linspace(sd_range.0, sd_range.1, resolution);
    let threshold = (psi_bar - 1.0).abs();
    let max_bias: Vec<Vec<f64>> = mean_dev
        .par_iter()
        .map(|&d| sd.iter().map(|&s| psi_bar.abs() * d + sd_psi * s).collect())
        .collect();
    let explains_away = max_bias
        .iter()
        .map(|row| row.iter().map(|&b| threshold > 0.0 && b >= threshold).collect())
        .collect();
    Ok(BiasContour {
        mean_dev,
        sd,
        max_bias,
        threshold,
        explains_away,
    })
}

// ---------------------------------------------------------------------------
// Covariate-shift bounds: weights within a factor γ of the empirical ones.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpBound {
    pub value: f64,
    /// Weights in the input order; each in [1/γ, γ], averaging 1.
    pub weights: Vec<f64>,
    /// Number of observations at the adverse extreme γ.
    pub k: usize,
    pub pivot: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must exceed 1, got {gamma}")));
    }
    Ok(())
}

fn pivot_weight(n: usize, k: usize, gamma: f64) -> f64 {
    n as f64 - k as f64 * gamma - (n - k - 1) as f64 / gamma
}

/// Extreme of (1/n) Σ w_i ψ_i over 1/γ ≤ w_i ≤ γ, Σ w_i = n. Sorting puts the
/// adverse tail first; it takes weight γ, one pivot takes
/// ω* = n − kγ − (n − k − 1)/γ, and the rest take 1/γ.
pub fn lp_bounds_closed_form(psi: &[f64], gamma: f64, direction: Direction) -> Result<LpBound> {
    if psi.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    check_gamma(gamma)?;
    let n = psi.len();
    let mut order: Vec<usize> = (0..n).collect();
    match direction {
        Direction::Min => order.sort_by(|&a, &b| psi[a].total_cmp(&psi[b])),
        Direction::Max => order.sort_by(|&a, &b| psi[b].total_cmp(&psi[a])),
    }
    let inv = 1.0 / gamma;
    let mut k = ((n as f64 / (gamma + 1.0)).floor() as usize).min(n - 1);
    while k > 0 && pivot_weight(n, k, gamma) < inv - 1e-12 {
        k -= 1;
    }
    while k + 1 < n && pivot_weight(n, k, gamma) > gamma + 1e-12 {
        k += 1;
    }
    let pivot = pivot_weight(n, k, gamma).clamp(inv, gamma);
    assert!(
        (pivot - pivot_weight(n, k, gamma)).abs() < 1e-9,
        "no feasible pivot for n = {n}, gamma = {gamma}"
    );
    let mut weights = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        weights[i] = match pos.cmp(&k) {
            std::cmp::Ordering::Less => gamma,
            std::cmp::Ordering::Equal => pivot,
            std::cmp::Ordering::Greater => inv,
        };
    }
    let value = weights.iter().zip(psi).map(|(w, v)| w * v).sum::<f64>() / n as f64;
    Ok(LpBound { value, weights, k, pivot })
}

pub const LP_ORACLE_MAX: usize = 12;

/// Exact optimum by enumerating every vertex of the box-plus-normalization
/// polytope: all but one coordinate at a bound, the free one fixed by the sum.
pub fn lp_bounds_oracle(psi: &[f64], gamma: f64, direction: Direction) -> Result<f64> {
    let n = psi.len();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    if n > LP_ORACLE_MAX {
        return Err(Error::TooLarge { n });
    }
    check_gamma(gamma)?;
    let (lo, hi) = (1.0 / gamma, gamma);
    let tol = 1e-12 * n as f64 * gamma;
    let mut best: Option<f64> = None;
    for free in 0..n {
        for mask in 0u32..(1 << (n - 1)) {
            let mut w = vec![0.0; n];
            let mut bit = 0;
            let mut used = 0.0;
            for (i, wi) in w.iter_mut().enumerate() {
                if i == free {
                    continue;
                }
                *wi = if mask >> bit & 1 == 1 { hi } else { lo };
                used += *wi;
                bit += 1;
            }
            let wf = n as f64 - used;
            if wf < lo - tol || wf > hi + tol {
                continue;
            }
            w[free] = wf;
            let v = w.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            best = Some(match (best, direction) {
                (None, _) => v,
                (Some(b), Direction::Min) => b.min(v),
                (Some(b), Direction::Max) => b.max(v),
            });
        }
    }
    Ok(best.expect("w = 1 lies in the polytope, so some vertex is feasible"))
}

// ---------------------------------------------------------------------------
// ξ from nested models: a "full" fit that adds confounder columns to a
// "reduced" fit on the same rows.

/// Outcome (and optionally race) logistic fits with and without the extra
/// columns. Full designs are `[1, r, x..., extra...]`; reduced are `[1, r, x...]`.
#[derive(Clone, Debug)]
pub struct NestedModels {
    pub outcome_full: GlmFit,
    pub outcome_reduced: GlmFit,
    /// Fitted on stopped rows when requested.
    pub race: Option<(GlmFit, GlmFit)>,
    pub n_extra: usize,
}

fn row_with(r: f64, x: &[f64], extra: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 + x.len() + extra.len());
    v.push(1.0);
    v.push(r);
    v.extend_from_slice(x);
    v.extend_from_slice(extra);
    v
}

/// Rows with M = 1 and D = 1.
pub fn stopped_black_rows(table: &EncounterTable) -> Vec<usize> {
    (0..table.n()).filter(|&i| table.m()[i] == 1 && table.d()[i] == 1).collect()
}

fn stopped_rows(table: &EncounterTable) -> Vec<usize> {
    (0..table.n()).filter(|&i| table.m()[i] == 1).collect()
}

/// Fit nested bundles. `reduced` encodes the retained covariates for every row
/// of `table` (intercept first); `extra` are the extra columns, also per row;
/// `places` is R per row.
pub fn fit_nested(
    table: &EncounterTable,
    reduced: &DesignMatrix,
    extra: &[(&str, &[f64])],
    places: &[f64],
    include_race: bool,
) -> Result<NestedModels> {
    if reduced.nrows() != table.n() || places.len() != table.n() {
        return Err(Error::DimensionMismatch {
            expected: table.n(),
            found: if reduced.nrows() != table.n() {
                reduced.nrows()
            } else {
                places.len()
            },
        });
    }
    let fit_pair = |rows: &[usize], response: &[u8]| -> Result<(GlmFit, GlmFit)> {
        let r: Vec<f64> = rows.iter().map(|&i| places[i]).collect();
        let red = reduced.select_rows(rows).insert_columns(1, &[("r", &r)])?;
        let picked: Vec<Vec<f64>> = extra.iter().map(|(_, v)| rows.iter().map(|&i| v[i]).collect()).collect();
        let cols: Vec<(&str, &[f64])> = extra.iter().zip(&picked).map(|((n, _), v)| (*n, v.as_slice())).collect();
        let full = red.append_columns(&cols)?;
        let y: Vec<u8> = rows.iter().map(|&i| response[i]).collect();
        Ok((fit_logistic(&full, &y, None)?, fit_logistic(&red, &y, None)?))
    };
    let black = stopped_black_rows(table);
    if black.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (outcome_full, outcome_reduced) = fit_pair(&black, table.y())?;
    let race = if include_race {
        Some(fit_pair(&stopped_rows(table), table.d())?)
    } else {
        None
    };
    Ok(NestedModels {
        outcome_full,
        outcome_reduced,
        race,
        n_extra: extra.len(),
    })
}

fn nested_ratio(full: &GlmFit, reduced: &GlmFit, r: f64, r0: f64, x: &[f64], extra: &[f64]) -> Result<f64> {
    let f = predict_prob(full, &row_with(r, x, extra))? / predict_prob(full, &row_with(r0, x, extra))?;
    let g = predict_prob(reduced, &row_with(r, x, &[]))? / predict_prob(reduced, &row_with(r0, x, &[]))?;
    Ok(f / g)
}

/// ξ̃ at one row: the Ψ-factor ratio (full over reduced) at (r, r0). Exactly 1
/// at r = r0 and whenever the extra coefficients are all zero.
pub fn xi_nested(models: &NestedModels, r: f64, r0: f64, x: &[f64], extra: &[f64]) -> Result<f64> {
    if extra.len() != models.n_extra {
        return Err(Error::DimensionMismatch {
            expected: models.n_extra,
            found: extra.len(),
        });
    }
    if r == r0 {
        return Ok(1.0);
    }
    let mut xi = nested_ratio(&models.outcome_full, &models.outcome_reduced, r, r0, x, extra)?;
    if let Some((full, reduced)) = &models.race {
        xi *= nested_ratio(full, reduced, r, r0, x, extra)?;
    }
    Ok(xi)
}

/// Fit the with-U and without-U bundles. The confounder comes from the
/// table's `u` column.
pub fn fit_confounder_models(table: &EncounterTable, design: &DesignMatrix, places: &[f64], include_race: bool) -> Result<NestedModels> {
    let u = table.u().ok_or(Error::MissingConfounder)?;
    fit_nested(table, design, &[("u", u)], places, include_race)
}

/// ξ̃(r, z) for covariate row `x` (no intercept) and confounder value `u`.
pub fn xi_from_confounder(models: &NestedModels, r: f64, r0: f64, x: &[f64], u: f64) -> Result<f64> {
    xi_nested(models, r, r0, x, &[u])
}

#[derive(Clone, Debug, PartialEq)]
pub struct XiSummary {
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

impl XiSummary {
    pub fn from_values(values: Vec<f64>) -> XiSummary {
        let (mean, sd) = mean_sd(&values);
        XiSummary { mean, sd, values }
    }

    pub fn params(&self) -> SensitivityParams {
        SensitivityParams {
            mean_xi: self.mean,
            sd_xi: self.sd,
            rho: None,
        }
    }
}

/// ξ̃ over `rows`, with the reduced covariates from `reduced` and the extra
/// columns from `extra` (both per table row).
pub fn xi_over_rows(models: &NestedModels, reduced: &DesignMatrix, extra: &[&[f64]], rows: &[usize], r: f64, r0: f64) -> Result<XiSummary> {
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    let values: Vec<f64> = rows
        .par_iter()
        .map(|&i| {
            let e: Vec<f64> = extra.iter().map(|c| c[i]).collect();
            xi_nested(models, r, r0, reduced.covariate_row(i), &e)
        })
        .collect::<Result<_>>()?;
    Ok(XiSummary::from_values(values))
}

/// Reduced-model outcome ratio over `rows`: the (E Ψ, sd Ψ) the benchmark
/// uses to rank sign combinations.
pub fn reduced_ratio_over_rows(models: &NestedModels, reduced: &DesignMatrix, rows: &[usize], r: f64, r0: f64) -> Result<XiSummary> {
    let values: Vec<f64> =
        rows.iter()
            .map(|&i| {
                let x = reduced.covariate_row(i);
                Ok(predict_prob(&models.outcome_reduced, &row_with(r, x, &[]))?
                    / predict_prob(&models.outcome_reduced, &row_with(r0, x, &[]))?)
            })
            .collect::<Result<_>>()?;
    Ok(XiSummary::from_values(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_examples() {
        let p = SensitivityParams::new(1.0, 0.0, None).unwrap();
        assert_eq!(bias_bound(1.4, 0.3, &p), 0.0);
        let q = SensitivityParams::new(0.8, 0.1, Some(-1.0)).unwrap();
        assert!((bias_bound(1.3, 0.2, &q) - 0.28).abs() < 1e-12);
        let w = SensitivityParams::new(0.8, 0.1, None).unwrap();
        assert!((bias_bound(1.3, 0.2, &w) - 0.28).abs() < 1e-12);
        let v = SensitivityParams::new(1.2, 0.1, None).unwrap();
        assert!((bias_bound(1.3, 0.2, &v) + 0.28).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(SensitivityParams::new(0.0, 0.1, None).is_err());
        assert!(SensitivityParams::new(1.0, -0.1, None).is_err());
        assert!(SensitivityParams::new(1.0, 0.1, Some(1.5)).is_err());
    }

    #[test]
    fn lp_worked_instance() {
        let b = lp_bounds_closed_form(&[1.0, 2.0, 3.0], 2.0, Direction::Min).unwrap();
        assert_eq!(b.k, 1);
        assert!((b.pivot - 0.5).abs() < 1e-15);
        assert_eq!(b.weights, vec![2.0, 0.5, 0.5]);
        assert!((b.value - 1.5).abs() < 1e-15);
        let o = lp_bounds_oracle(&[1.0, 2.0, 3.0], 2.0, Direction::Min).unwrap();
        assert!((o - 1.5).abs() < 1e-12);
    }

    #[test]
    fn lp_degenerate_inputs() {
        assert_eq!(lp_bounds_closed_form(&[4.2], 3.0, Direction::Max).unwrap().value, 4.2);
        assert_eq!(lp_bounds_oracle(&[4.2], 3.0, Direction::Min).unwrap(), 4.2);
        assert!(matches!(
            lp_bounds_oracle(&[1.0; 13], 2.0, Direction::Min),
            Err(Error::TooLarge { n: 13 })
        ));
        assert!(lp_bounds_closed_form(&[1.0], 1.0, Direction::Min).is_err());
    }

    #[test]
    fn contour_null_effect() {
        let c = contour_grid(1.0, 0.1, (0.0, 0.5), (0.0, 0.5), 11).unwrap();
        assert_eq!(c.threshold, 0.0);
        assert!(c.explains_away.iter().flatten().all(|&f| !f));
    }

    #[test]
    fn zero_coefficient_nesting() {
        let m = NestedModels {
            outcome_full: GlmFit::from_coefficients(vec![-0.3, 1.1, 0.4, 0.0]),
            outcome_reduced: GlmFit::from_coefficients(vec![-0.3, 1.1, 0.4]),
            race: Some((
                GlmFit::from_coefficients(vec![0.2, -0.5, 0.1, 0.0]),
                GlmFit::from_coefficients(vec![0.2, -0.5, 0.1]),
            )),
            n_extra: 1,
        };
        for u in [-2.0, 0.0, 3.5] {
            assert_eq!(xi_from_confounder(&m, 0.8, 0.2, &[0.7], u).unwrap(), 1.0);
        }
    }
}

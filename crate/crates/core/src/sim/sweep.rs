//! Sensitivity parameters implied by the interpretability processes as the
//! violation strength grows.
//!
//! ξ is evaluated semi-analytically: the rate formulas of the process are
//! known, so only the covariate sample (stopped rows) and the quartiles of R
//! come from a simulated draw.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, DgpKind, DgpSpec, RowState, SimulatedData};
use crate::error::{Error, Result};
use crate::stats::{mean_sd, quantile_sorted, sigmoid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDgp {
    InterpConfounding,
    InterpRatio,
}

impl SweepDgp {
    pub fn max_strength(&self) -> f64 {
        match self {
            SweepDgp::InterpConfounding => 1.0,
            SweepDgp::InterpRatio => 0.5,
        }
    }

    fn kind(&self, a: f64, signs: Vec<f64>) -> DgpKind {
        match self {
            SweepDgp::InterpConfounding => DgpKind::InterpConfounding { a, signs },
            SweepDgp::InterpRatio => DgpKind::InterpRatio { a, signs },
        }
    }

    fn n_signs(&self) -> usize {
        match self {
            SweepDgp::InterpConfounding => 4,
            SweepDgp::InterpRatio => 3,
        }
    }
}

/// Worst case over sign combinations at one strength. The ξ̃ entries are
/// only defined for the confounding process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub a: f64,
    pub xi_mean_dev: f64,
    pub xi_sd: f64,
    pub xi_tilde_mean_dev: Option<f64>,
    pub xi_tilde_sd: Option<f64>,
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn stopped_x(sim: &SimulatedData) -> Vec<(f64, f64)> {
    let t = &sim.table;
    let x = match &t.covariate("x").map(|c| &c.values) {
        Some(crate::data::CovariateValues::Continuous(v)) => v.clone(),
        _ => return Vec::new(),
    };
    let u = t.u().map(|u| u.to_vec()).unwrap_or_else(|| vec![0.0; t.n()]);
    (0..t.n()).filter(|&i| t.m()[i] == 1).map(|i| (x[i], u[i])).collect()
}

/// First and third quartiles of R over the full population draw.
pub fn r_quartiles(sim: &SimulatedData) -> Result<(f64, f64)> {
    let mut r = sim.table.r().ok_or(Error::MissingColumn("r".into()))?.to_vec();
    r.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&r, 0.25), quantile_sorted(&r, 0.75)))
}

/// ξ(r, x_i) and ξ̃(r, x_i, u_i) over the stopped rows of a confounding
/// draw. The plug-in target averages the confounder over f(u | D=1, r, x);
/// the truth averages over f(u | r, x).
pub fn confounding_xi(sim: &SimulatedData, r: f64, r0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let kind = &sim.spec.kind;
    let DgpKind::InterpConfounding { a, signs } = kind else {
        return Err(Error::InvalidArgument("expected the confounding process".into()));
    };
    let (lo, hi) = sim.r_scale.ok_or(Error::MissingColumn("r".into()))?;
    let raw = |r: f64| lo + (r - 0.1) * 1.2 * (hi - lo);
    let g = |r: f64, x: f64, u: f64| {
        let s = RowState {
            precinct: 0,
            q: 1,
            x,
            u,
            r,
        };
        kind.stop_prob(&s, 1) * kind.force_prob(&s, 1)
    };
    // (plug-in, truth) numerators at r.
    let parts = |r: f64, x: f64| {
        let (mut num_d, mut den_d, mut num, mut den) = (0.0, 0.0, 0.0, 0.0);
        for u in [0.0, 1.0] {
            let f = normal_pdf(raw(r) - signs[0] * a * u - x);
            let pd = sigmoid(signs[1] * a * u + x);
            let gv = g(r, x, u);
            num_d += f * pd * gv;
            den_d += f * pd;
            num += f * gv;
            den += f;
        }
        (num_d / den_d, num / den)
    };
    let mut xi = Vec::new();
    let mut xi_tilde = Vec::new();
    for (x, u) in stopped_x(sim) {
        let (pa, ta) = parts(r, x);
        let (pb, tb) = parts(r0, x);
        let psi = pa / pb;
        xi.push((ta / tb) / psi);
        xi_tilde.push((g(r, x, u) / g(r0, x, u)) / psi);
    }
    Ok((xi, xi_tilde))
}

const QUAD_NODES: usize = 4001;
const QUAD_HALF_WIDTH: f64 = 8.0;

/// ξ(r, x_i) over the stopped rows of a ratio-violation draw:
/// [P(M=1|D=1,r,x)/P(M=1|D=1,r0,x)] / [P(M=1|D=1,r)/P(M=1|D=1,r0)], with the
/// marginal rate integrated over f(x | D=1, r) by the trapezoid rule.
pub fn ratio_xi(sim: &SimulatedData, r: f64, r0: f64) -> Result<Vec<f64>> {
    let kind = &sim.spec.kind;
    if !matches!(kind, DgpKind::InterpRatio { .. }) {
        return Err(Error::InvalidArgument("expected the ratio-violation process".into()));
    }
    let stop = |r: f64, x: f64| {
        kind.stop_prob(
            &RowState {
                precinct: 0,
                q: 1,
                x,
                u: 0.0,
                r,
            },
            1,
        )
    };
    let marginal = |r: f64| {
        let step = 2.0 * QUAD_HALF_WIDTH / (QUAD_NODES - 1) as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..QUAD_NODES {
            let x = -QUAD_HALF_WIDTH + k as f64 * step;
            let w = if k == 0 || k == QUAD_NODES - 1 { 0.5 } else { 1.0 };
            let f = normal_pdf(x) * normal_pdf(r + 0.5 * x) * sigmoid(0.3 * x - 0.3 * r);
            num += w * f * stop(r, x);
            den += w * f;
        }
        num / den
    };
    let base = marginal(r) / marginal(r0);
    Ok(stopped_x(sim).into_iter().map(|(x, _)| (stop(r, x) / stop(r0, x)) / base).collect())
}

fn sign_combinations(k: usize) -> Vec<Vec<f64>> {
    (0..1usize << k)
        .map(|bits| (0..k).map(|j| if bits >> j & 1 == 1 { -1.0 } else { 1.0 }).collect())
        .collect()
}

/// For each strength in `a_grid`, draw the process under every sign
/// combination (same seed throughout), set r0 and r to the first and third
/// quartiles of R, and keep the largest |E ξ − 1| and sd ξ (and the same
/// for ξ̃) over the combinations.
pub fn interpretability_sweep(dgp: SweepDgp, a_grid: &[f64], n: usize, seed: u64) -> Result<Vec<SweepPoint>> {
    if let Some(a) = a_grid.iter().find(|a| !(0.0..=dgp.max_strength()).contains(*a)) {
        return Err(Error::InvalidArgument(format!(
            "strength a = {a} outside [0, {}]",
            dgp.max_strength()
        )));
    }
    let combos = sign_combinations(dgp.n_signs());
    let jobs: Vec<(usize, Vec<f64>)> = (0..a_grid.len()).flat_map(|i| combos.iter().map(move |s| (i, s.clone()))).collect();
    let stats: Vec<(usize, (f64, f64), Option<(f64, f64)>)> = jobs
        .into_par_iter()
        .map(|(i, signs)| {
            let spec = DgpSpec::new(dgp.kind(a_grid[i], signs), n, 1, seed)?;
            let sim = generate(&spec)?;
            let (r0, r) = r_quartiles(&sim)?;
            let moments = |v: &[f64]| {
                let (m, s) = mean_sd(v);
                ((m - 1.0).abs(), s)
            };
            Ok(match dgp {
                SweepDgp::InterpConfounding => {
                    let (xi, xt) = confounding_xi(&sim, r, r0)?;
                    (i, moments(&xi), Some(moments(&xt)))
                }
                SweepDgp::InterpRatio => (i, moments(&ratio_xi(&sim, r, r0)?), None),
            })
        })
        .collect::<Result<_>>()?;
    Ok(a_grid
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let mine: Vec<_> = stats.iter().filter(|s| s.0 == i).collect();
            let max =
                |f: &dyn Fn(&(usize, (f64, f64), Option<(f64, f64)>)) -> Option<f64>| mine.iter().filter_map(|s| f(s)).reduce(f64::max);
            SweepPoint {
                a,
                xi_mean_dev: max(&|s| Some(s.1 .0)).unwrap_or(f64::NAN),
                xi_sd: max(&|s| Some(s.1 .1)).unwrap_or(f64::NAN),
                xi_tilde_mean_dev: max(&|s| s.2.map(|v| v.0)),
                xi_tilde_sd: max(&|s| s.2.map(|v| v.1)),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strength_is_exact() {
        let pts = interpretability_sweep(SweepDgp::InterpConfounding, &[0.0], 2000, 1).unwrap();
        assert!(pts[0].xi_mean_dev < 1e-12 && pts[0].xi_sd < 1e-12);
        assert!(pts[0].xi_tilde_mean_dev.unwrap() < 1e-12);
        // The stop model is logistic in (r, x) and X is correlated with R,
        // so the ratio transfer already fails without interactions.
        let pts = interpretability_sweep(SweepDgp::InterpRatio, &[0.0], 2000, 1).unwrap();
        assert!(pts[0].xi_mean_dev > 0.05 && pts[0].xi_mean_dev < 0.1);
        assert!(pts[0].xi_tilde_sd.is_none());
    }

    #[test]
    fn range_checked() {
        assert!(interpretability_sweep(SweepDgp::InterpRatio, &[0.6], 100, 1).is_err());
    }

    #[test]
    fn sign_combos() {
        let c = sign_combinations(3);
        assert_eq!(c.len(), 8);
        assert_eq!(c[0], vec![1.0, 1.0, 1.0]);
        assert_eq!(c[7], vec![-1.0, -1.0, -1.0]);
    }
}

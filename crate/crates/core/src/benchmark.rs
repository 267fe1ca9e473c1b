//! Benchmarking sensitivity parameters against observed covariates.
//!
//! Informal benchmarking drops a covariate X_j and reads ξ̃_j off the nested
//! fits. Formal benchmarking first measures how strongly X_j is associated
//! with Y and R (partial R²), scales those strengths by K, then builds a
//! synthetic confounder Ũ with exactly those partial R² and computes ξ̃ from
//! models with and without Ũ. Every sign combination is tried and the one
//! with the largest bias is kept.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DesignMatrix, EncounterTable};
use crate::error::{Error, Result};
use crate::resample::stream_rng;
use crate::sensitivity::{bias_bound, fit_nested, reduced_ratio_over_rows, stopped_black_rows, xi_over_rows, XiSummary};
use crate::stats::{mean_sd, ols_coefficients, ols_residuals};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2Targets {
    /// R²(Y ~ U | R, X)
    pub r2_y: f64,
    /// R²(R ~ U | X)
    pub r2_r: f64,
    pub sign_y: f64,
    pub sign_r: f64,
}

impl R2Targets {
    pub fn new(r2_y: f64, r2_r: f64, sign_y: f64, sign_r: f64) -> Result<R2Targets> {
        for (name, v) in [("r2_y", r2_y), ("r2_r", r2_r)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::TargetOutOfRange {
                    name: name.into(),
                    value: v,
                });
            }
        }
        for s in [sign_y, sign_r] {
            if s != 1.0 && s != -1.0 {
                return Err(Error::InvalidArgument(format!("signs must be +1 or -1, got {s}")));
            }
        }
        Ok(R2Targets {
            r2_y,
            r2_r,
            sign_y,
            sign_r,
        })
    }

    /// Targets multiplied by K.
    pub fn scaled(&self, k: f64) -> Result<R2Targets> {
        if !(k >= 0.0) {
            return Err(Error::InvalidArgument(format!("K must be nonnegative, got {k}")));
        }
        R2Targets::new(k * self.r2_y, k * self.r2_r, self.sign_y, self.sign_r)
    }

    pub fn with_signs(&self, sign_y: f64, sign_r: f64) -> Result<R2Targets> {
        R2Targets::new(self.r2_y, self.r2_r, sign_y, sign_r)
    }

    /// Partial correlation of U with Y.
    pub fn c(&self) -> f64 {
        self.sign_y * self.r2_y.sqrt()
    }

    /// Partial correlation of U with R.
    pub fn a(&self) -> f64 {
        self.sign_r * self.r2_r.sqrt()
    }
}

fn centered_sd(v: &[f64]) -> f64 {
    mean_sd(v).1
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    cov / (sa * sb)
}

/// R² of `response` on `columns` after both are residualized on
/// `conditioning`. For one column this is the squared partial correlation.
pub fn partial_r2(response: &[f64], columns: &[&[f64]], conditioning: &DesignMatrix) -> Result<f64> {
    if columns.is_empty() {
        return Err(Error::InvalidArgument("partial R² needs at least one column".into()));
    }
    let ey = ols_residuals(conditioning, response)?;
    let resid: Vec<Vec<f64>> = columns.iter().map(|c| ols_residuals(conditioning, c)).collect::<Result<_>>()?;
    let named: Vec<(String, &[f64])> = resid.iter().enumerate().map(|(k, v)| (format!("c{k}"), v.as_slice())).collect();
    let cols: Vec<(&str, &[f64])> = named.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let dm = DesignMatrix::from_columns(&cols)?;
    let beta = ols_coefficients(&dm, &ey)?;
    let rss: f64 = (0..dm.nrows())
        .map(|i| (ey[i] - dm.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    let tss: f64 = ey.iter().map(|v| v * v).sum();
    if tss <= 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - rss / tss).clamp(0.0, 1.0))
}

/// Achieved partial correlations of a confounder with Y (given R, X) and R
/// (given X), recomputed from residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Achieved {
    pub corr_y: f64,
    pub corr_r: f64,
}

impl Achieved {
    pub fn r2_y(&self) -> f64 {
        self.corr_y * self.corr_y
    }
    pub fn r2_r(&self) -> f64 {
        self.corr_r * self.corr_r
    }
}

pub fn achieved_partials(x_design: &DesignMatrix, r: &[f64], y: &[f64], u: &[f64]) -> Result<Achieved> {
    let rx = x_design.insert_columns(1, &[("r", r)])?;
    let corr_y = corr(&ols_residuals(&rx, y)?, &ols_residuals(&rx, u)?);
    let corr_r = corr(&ols_residuals(x_design, r)?, &ols_residuals(x_design, u)?);
    Ok(Achieved { corr_y, corr_r })
}

/// Synthetic confounder Ũ = u⊥ + α R|X with the target partial R².
///
/// e_Y is the residual of Y on (1, R, X), scaled to unit sd;
/// u⊥ = c ẽ_Y + √(1 − c²) z with z a seeded normal draw made orthogonal to
/// (1, X, R, e_Y) and scaled to unit sd; α = a/√(1 − a²) · sd(u⊥)/sd(R|X).
/// `x_design` carries the intercept.
pub fn construct_confounder(x_design: &DesignMatrix, r: &[f64], y: &[f64], targets: &R2Targets, seed: u64) -> Result<Vec<f64>> {
    let n = x_design.nrows();
    for len in [r.len(), y.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    if n <= x_design.ncols() + 3 {
        return Err(Error::RankDeficient);
    }
    let targets = R2Targets::new(targets.r2_y, targets.r2_r, targets.sign_y, targets.sign_r)?;
    let rx = x_design.insert_columns(1, &[("r", r)])?;
    let e_y = ols_residuals(&rx, y)?;
    let sd_ey = centered_sd(&e_y);
    if !(sd_ey > 0.0) {
        return Err(Error::InvalidArgument("outcome has no variation left after (R, X)".into()));
    }
    let e_y_std: Vec<f64> = e_y.iter().map(|v| v / sd_ey).collect();
    let e_r = ols_residuals(x_design, r)?;
    let sd_er = centered_sd(&e_r);
    if !(sd_er > 0.0) {
        return Err(Error::RankDeficient);
    }

    let mut rng = stream_rng(seed, 0);
    let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let span = rx.append_columns(&[("e_y", &e_y)])?;
    let z = ols_residuals(&span, &raw)?;
    let (mz, sz) = mean_sd(&z);
    let z: Vec<f64> = z.iter().map(|v| (v - mz) / sz).collect();

    let c = targets.c();
    let a = targets.a();
    let u_perp: Vec<f64> = e_y_std.iter().zip(&z).map(|(e, z)| c * e + (1.0 - c * c).sqrt() * z).collect();
    let alpha = a / (1.0 - a * a).sqrt() * centered_sd(&u_perp) / sd_er;
    Ok(u_perp.iter().zip(&e_r).map(|(u, e)| u + alpha * e).collect())
}

/// Everything the benchmark needs about the data.
#[derive(Clone, Copy, Debug)]
pub struct BenchmarkInputs<'a> {
    pub table: &'a EncounterTable,
    /// Full observed design for every table row, intercept first.
    pub design: &'a DesignMatrix,
    /// R per table row.
    pub places: &'a [f64],
    pub r: f64,
    pub r0: f64,
    /// Extra conditioning column for the partial R² of the benchmark
    /// covariate (per table row).
    pub reference: Option<&'a [f64]>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignResult {
    pub sign_y: f64,
    pub sign_r: f64,
    pub achieved: Achieved,
    pub xi: XiSummary,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormalBenchmark {
    pub covariate: String,
    pub k: f64,
    /// Partial R² of the benchmark covariate (before scaling).
    pub benchmark: (f64, f64),
    pub combos: Vec<SignResult>,
    pub selected: usize,
}

impl FormalBenchmark {
    pub fn worst(&self) -> &SignResult {
        &self.combos[self.selected]
    }
}

fn covariate_range(design: &DesignMatrix, name: &str) -> Result<std::ops::Range<usize>> {
    design.covariate_columns(name).ok_or(Error::UnknownCovariate(name.into()))
}

/// Partial R² of covariate `name` with Y given (R, other covariates) and with
/// R given the other covariates, on stopped D = 1 rows.
pub fn benchmark_r2(inputs: &BenchmarkInputs, name: &str) -> Result<(f64, f64)> {
    let cols = covariate_range(inputs.design, name)?;
    let rows = stopped_black_rows(inputs.table);
    let sub = inputs.design.select_rows(&rows);
    let xj: Vec<Vec<f64>> = cols.clone().map(|c| sub.column(c)).collect();
    let xj_refs: Vec<&[f64]> = xj.iter().map(|v| v.as_slice()).collect();
    let mut others = sub.drop_columns(&cols.collect::<Vec<_>>());
    if let Some(reference) = inputs.reference {
        let v: Vec<f64> = rows.iter().map(|&i| reference[i]).collect();
        others = others.append_columns(&[("reference", &v)])?;
    }
    let r: Vec<f64> = rows.iter().map(|&i| inputs.places[i]).collect();
    let y: Vec<f64> = rows.iter().map(|&i| inputs.table.y()[i] as f64).collect();
    let with_r = others.insert_columns(1, &[("r", &r)])?;
    Ok((partial_r2(&y, &xj_refs, &with_r)?, partial_r2(&r, &xj_refs, &others)?))
}

pub const SIGN_COMBINATIONS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

/// Two-step formal benchmark of covariate `name` at multiplier `k`. ξ̃ is
/// evaluated on the outcome factor over stopped D = 1 rows, and the sign
/// combination with the largest |bias| (ranked with the reduced outcome ratio
/// as Ψ) is selected.
pub fn formal_benchmark(inputs: &BenchmarkInputs, name: &str, k: f64) -> Result<FormalBenchmark> {
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("K must be nonnegative, got {k}")));
    }
    let benchmark = benchmark_r2(inputs, name)?;
    let base = R2Targets::new(benchmark.0, benchmark.1, 1.0, 1.0)?.scaled(k)?;
    let rows = stopped_black_rows(inputs.table);
    let table = inputs.table.select(&rows);
    let design = inputs.design.select_rows(&rows);
    let places: Vec<f64> = rows.iter().map(|&i| inputs.places[i]).collect();
    let y: Vec<f64> = table.y().iter().map(|&v| v as f64).collect();
    let all: Vec<usize> = (0..rows.len()).collect();

    let mut combos = Vec::with_capacity(4);
    for (sy, sr) in SIGN_COMBINATIONS {
        let targets = base.with_signs(sy, sr)?;
        let u = construct_confounder(&design, &places, &y, &targets, inputs.seed)?;
        let achieved = achieved_partials(&design, &places, &y, &u)?;
        let models = fit_nested(&table, &design, &[("u", &u)], &places, false)?;
        let xi = xi_over_rows(&models, &design, &[&u], &all, inputs.r, inputs.r0)?;
        let psi = reduced_ratio_over_rows(&models, &design, &all, inputs.r, inputs.r0)?;
        let bias = bias_bound(psi.mean, psi.sd, &xi.params());
        combos.push(SignResult {
            sign_y: sy,
            sign_r: sr,
            achieved,
            xi,
            bias,
        });
    }
    let selected = (0..combos.len())
        .max_by(|&a, &b| combos[a].bias.abs().total_cmp(&combos[b].bias.abs()).then(b.cmp(&a)))
        .expect("four combinations");
    Ok(FormalBenchmark {
        covariate: name.into(),
        k,
        benchmark,
        combos,
        selected,
    })
}

/// ξ̃_j from fits with and without covariate `name` (outcome factor, and the
/// race factor when `include_race`), over stopped D = 1 rows.
pub fn informal_benchmark(inputs: &BenchmarkInputs, name: &str, include_race: bool) -> Result<XiSummary> {
    let cols: Vec<usize> = covariate_range(inputs.design, name)?.collect();
    let reduced = inputs.design.drop_columns(&cols);
    let extra: Vec<Vec<f64>> = cols.iter().map(|&c| inputs.design.column(c)).collect();
    let labels: Vec<String> = cols.iter().map(|&c| inputs.design.labels()[c].clone()).collect();
    let named: Vec<(&str, &[f64])> = labels.iter().map(|s| s.as_str()).zip(extra.iter().map(|v| v.as_slice())).collect();
    let models = fit_nested(inputs.table, &reduced, &named, inputs.places, include_race)?;
    let refs: Vec<&[f64]> = extra.iter().map(|v| v.as_slice()).collect();
    xi_over_rows(&models, &reduced, &refs, &stopped_black_rows(inputs.table), inputs.r, inputs.r0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub covariate: String,
    pub informal: XiSummary,
    pub formal: Vec<FormalBenchmark>,
}

impl BenchmarkReport {
    /// (k_m, k_v) for the formal entry at `index`: |E ξ̃ − 1| and Var ξ̃
    /// relative to the informal ξ̃_j.
    pub fn multipliers(&self, index: usize) -> (f64, f64) {
        let w = &self.formal[index].worst().xi;
        let km = (w.mean - 1.0).abs() / (self.informal.mean - 1.0).abs();
        let kv = (w.sd * w.sd) / (self.informal.sd * self.informal.sd);
        (km, kv)
    }
}

pub fn benchmark_report(inputs: &BenchmarkInputs, name: &str, ks: &[f64], include_race: bool) -> Result<BenchmarkReport> {
    let informal = informal_benchmark(inputs, name, include_race)?;
    let formal = ks.iter().map(|&k| formal_benchmark(inputs, name, k)).collect::<Result<_>>()?;
    Ok(BenchmarkReport {
        covariate: name.into(),
        informal,
        formal,
    })
}

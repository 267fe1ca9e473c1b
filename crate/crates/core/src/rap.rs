//! The race-and-place ratio Ψ(r, x): how the probability of force for a Black
//! civilian changes when the Black share of the precinct moves from r0 to r.
//!
//! Ψ(r, x) is the product of four ratios built from stopped data plus
//! precinct-level geography:
//!
//! ```text
//! E(Y|r,M=1,D=1,x)   P(D=1|r,M=1,x)   f(r|M=1,x)    f(r0|D=1,x)
//! ---------------- · -------------- · ----------- · -----------
//! E(Y|r0,M=1,D=1,x)  P(D=1|r0,M=1,x)  f(r0|M=1,x)   f(r|D=1,x)
//! ```
//!
//! The population density f(r|D=1,x) is never observed directly. It is
//! rebuilt from f(r|D=1) = P(D=1|R=r) f(r) / P(D=1) (kernel smoother over
//! precinct compositions times a time-weighted KDE) and the stopped-data
//! adjustment f(r|D=1,x,M=1)/f(r|D=1,M=1). The r-free confounding terms of
//! the ignorability assumption cancel in the ratio and are never needed.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{collapse_patterns, DesignMatrix, EncounterTable};
use crate::error::{Error, Result};
use crate::mobility::MobilityModel;
use crate::resample::{bootstrap_percentile, subsample};
use crate::stats::{fit_beta_regression, fit_logistic, predict_prob, rule_of_thumb_weighted, BetaFit, GlmFit, KernelSpec, WeightedSample};

const DENSITY_FLOOR: f64 = 1e-12;
const PROB_CLAMP: f64 = 1e-12;

/// Model family for the conditional densities of R among stopped rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityModel {
    /// t(2) kernel density within each covariate stratum.
    #[default]
    Kde,
    /// Beta regression of R on the covariates.
    Beta,
}

/// How P(D=1|R=r,M=1,x) is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaceFactor {
    /// Logistic regression of D on (r, x) among stopped rows.
    Logistic,
    /// P(D=1|M=1,x) · f(r|D=1,M=1,x) / f(r|M=1,x), from the same density
    /// models used elsewhere in Ψ.
    DensityBayes,
}

/// Precinct-level inputs: place values r_j, compositions π_j, time weights C_j.
#[derive(Clone, Debug, PartialEq)]
pub struct Geography {
    pub r: Vec<f64>,
    pub pi: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Geography {
    pub fn new(r: Vec<f64>, pi: Vec<f64>, weights: Vec<f64>) -> Result<Geography> {
        let q = r.len();
        for len in [pi.len(), weights.len()] {
            if len != q {
                return Err(Error::DimensionMismatch { expected: q, found: len });
            }
        }
        if let Some(j) = pi.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidProportion { precinct: j, value: pi[j] });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(Geography { r, pi, weights })
    }

    /// Place values are the residential shares p_j; compositions are the
    /// mobility-adjusted π_j.
    pub fn from_mobility(m: &MobilityModel) -> Result<Geography> {
        Geography::new(m.p.clone(), m.pi.clone(), m.weights.clone())
    }

    /// P(D=1) = Σ π_j C_j / Σ C_j
    pub fn black_share(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        self.pi.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() / total
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RapOptions {
    pub density: DensityModel,
    /// Defaults to `DensityBayes` for KDE densities and `Logistic` for beta.
    pub race: Option<RaceFactor>,
    /// Shared bandwidth; rule of thumb over the stopped R values when absent.
    pub bandwidth: Option<f64>,
    /// Allowed range of r; the observed range of R among stopped rows when absent.
    pub r_domain: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
enum StoppedDensities {
    Strata {
        index: HashMap<Vec<u64>, usize>,
        all: Vec<WeightedSample>,
        black: Vec<Option<WeightedSample>>,
        black_share: Vec<f64>,
        black_marginal: WeightedSample,
    },
    Beta {
        all: BetaFit,
        black: BetaFit,
        black_marginal: BetaFit,
        black_share: Option<GlmFit>,
    },
}

#[derive(Clone, Debug)]
pub struct RapModels {
    /// Design `[1, r, x...]` on stopped D = 1 rows.
    pub outcome: GlmFit,
    /// Design `[1, r, x...]` on stopped rows, when the logistic race factor is used.
    pub race_logistic: Option<GlmFit>,
    pub race_factor: RaceFactor,
    densities: StoppedDensities,
    population: WeightedSample,
    smoother_points: Vec<f64>,
    smoother_values: Vec<f64>,
    pub p_black: f64,
    pub kernel: KernelSpec,
    pub domain: (f64, f64),
    n_covariates: usize,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

fn with_r(r: f64, x: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(x.len() + 2);
    row.push(1.0);
    row.push(r);
    row.extend_from_slice(x);
    row
}

fn with_intercept(x: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(x.len() + 1);
    row.push(1.0);
    row.extend_from_slice(x);
    row
}

/// Place value of each row: the table's own `r` column when present,
/// otherwise the precinct's r_j.
pub fn row_places(table: &EncounterTable, geo: &Geography) -> Result<Vec<f64>> {
    match table.r() {
        Some(r) => Ok(r.to_vec()),
        None => {
            if geo.r.len() < table.q() {
                return Err(Error::DimensionMismatch {
                    expected: table.q(),
                    found: geo.r.len(),
                });
            }
            Ok(table.precinct().iter().map(|&p| geo.r[p as usize]).collect())
        }
    }
}

/// Fit every component of Ψ from the stopped rows of `table`.
pub fn fit_rap_models(table: &EncounterTable, design: &DesignMatrix, geo: &Geography, opts: &RapOptions) -> Result<RapModels> {
    if design.nrows() != table.n() {
        return Err(Error::DimensionMismatch {
            expected: table.n(),
            found: design.nrows(),
        });
    }
    let places = row_places(table, geo)?;
    let stopped: Vec<usize> = (0..table.n()).filter(|&i| table.m()[i] == 1).collect();
    if stopped.is_empty() {
        return Err(Error::EmptyTable);
    }
    let black: Vec<usize> = stopped.iter().copied().filter(|&i| table.d()[i] == 1).collect();
    let r_stopped: Vec<f64> = stopped.iter().map(|&i| places[i]).collect();
    let r_black: Vec<f64> = black.iter().map(|&i| places[i]).collect();

    let outcome_dm = design.select_rows(&black).insert_columns(1, &[("r", &r_black)])?;
    let y_black: Vec<u8> = black.iter().map(|&i| table.y()[i]).collect();
    let outcome = fit_logistic(&outcome_dm, &y_black, None)?;

    let all_r = WeightedSample::from_values(&r_stopped)?;
    let h = match opts.bandwidth {
        Some(h) => h,
        None => rule_of_thumb_weighted(all_r.points(), all_r.weights()),
    };
    let kernel = KernelSpec::t2(h)?;
    let race_factor = opts.race.unwrap_or(match opts.density {
        DensityModel::Kde => RaceFactor::DensityBayes,
        DensityModel::Beta => RaceFactor::Logistic,
    });

    let densities = match opts.density {
        DensityModel::Kde => {
            for j in 1..design.ncols() {
                if stopped.iter().any(|&i| {
                    let v = design.row(i)[j];
                    v != 0.0 && v != 1.0
                }) {
                    return Err(Error::InvalidArgument(format!(
                        "kernel densities need categorical covariates; column `{}` is continuous (use the beta density model)",
                        design.labels()[j]
                    )));
                }
            }
            let mut index = HashMap::new();
            let mut r_all: Vec<Vec<f64>> = Vec::new();
            let mut r_blk: Vec<Vec<f64>> = Vec::new();
            for &i in &stopped {
                let k = *index.entry(key(design.covariate_row(i))).or_insert_with(|| {
                    r_all.push(Vec::new());
                    r_blk.push(Vec::new());
                    r_all.len() - 1
                });
                r_all[k].push(places[i]);
                if table.d()[i] == 1 {
                    r_blk[k].push(places[i]);
                }
            }
            StoppedDensities::Strata {
                index,
                black_share: r_all.iter().zip(&r_blk).map(|(a, b)| b.len() as f64 / a.len() as f64).collect(),
                all: r_all.iter().map(|v| WeightedSample::from_values(v)).collect::<Result<_>>()?,
                black: r_blk
                    .iter()
                    .map(|v| if v.is_empty() { None } else { WeightedSample::from_values(v).ok() })
                    .collect(),
                black_marginal: WeightedSample::from_values(&r_black)?,
            }
        }
        DensityModel::Beta => {
            let x_stopped = design.select_rows(&stopped);
            let x_black = design.select_rows(&black);
            let ones = vec![1.0; black.len()];
            let intercept = DesignMatrix::from_columns(&[("(intercept)", &ones)])?;
            let black_share = match race_factor {
                RaceFactor::DensityBayes => {
                    let d: Vec<u8> = stopped.iter().map(|&i| table.d()[i]).collect();
                    Some(fit_logistic(&x_stopped, &d, None)?)
                }
                RaceFactor::Logistic => None,
            };
            StoppedDensities::Beta {
                all: fit_beta_regression(&x_stopped, &r_stopped)?,
                black: fit_beta_regression(&x_black, &r_black)?,
                black_marginal: fit_beta_regression(&intercept, &r_black)?,
                black_share,
            }
        }
    };

    let race_logistic = match race_factor {
        RaceFactor::Logistic => {
            let dm = design.select_rows(&stopped).insert_columns(1, &[("r", &r_stopped)])?;
            let d: Vec<u8> = stopped.iter().map(|&i| table.d()[i]).collect();
            Some(fit_logistic(&dm, &d, None)?)
        }
        RaceFactor::DensityBayes => None,
    };

    let population = WeightedSample::new(&geo.r, &geo.weights)?;
    let mut pairs: Vec<(f64, f64)> = geo.r.iter().copied().zip(geo.pi.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let lo = r_stopped.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r_stopped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RapModels {
        outcome,
        race_logistic,
        race_factor,
        densities,
        population,
        smoother_points: pairs.iter().map(|p| p.0).collect(),
        smoother_values: pairs.iter().map(|p| p.1).collect(),
        p_black: geo.black_share(),
        kernel,
        domain: opts.r_domain.unwrap_or((lo, hi)),
        n_covariates: design.ncols() - 1,
    })
}

impl RapModels {
    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_covariates {
            return Err(Error::DimensionMismatch {
                expected: self.n_covariates,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_r(&self, r: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if !(r >= lo - tol && r <= hi + tol) {
            return Err(Error::OutOfRange { r, lo, hi });
        }
        Ok(())
    }

    fn stratum(&self, x: &[f64]) -> Result<usize> {
        match &self.densities {
            StoppedDensities::Strata { index, .. } => index
                .get(&key(x))
                .copied()
                .ok_or_else(|| Error::InvalidArgument("covariate pattern has no stopped rows".into())),
            StoppedDensities::Beta { .. } => Ok(0),
        }
    }

    /// E(Y|R=r, M=1, D=1, x)
    pub fn outcome_prob(&self, r: f64, x: &[f64]) -> Result<f64> {
        predict_prob(&self.outcome, &with_r(r, x))
    }

    /// f(r|M=1, x)
    pub fn f_stopped(&self, r: f64, x: &[f64]) -> Result<f64> {
        match &self.densities {
            StoppedDensities::Strata { all, .. } => all[self.stratum(x)?].density(&self.kernel, r),
            StoppedDensities::Beta { all, .. } => all.density(&with_intercept(x), r),
        }
    }

    /// f(r|D=1, M=1, x)
    pub fn f_stopped_black(&self, r: f64, x: &[f64]) -> Result<f64> {
        match &self.densities {
            StoppedDensities::Strata { black, .. } => match &black[self.stratum(x)?] {
                Some(s) => s.density(&self.kernel, r),
                None => Err(Error::InvalidArgument("covariate pattern has no stopped Black rows".into())),
            },
            StoppedDensities::Beta { black, .. } => black.density(&with_intercept(x), r),
        }
    }

    /// f(r|D=1, M=1)
    pub fn f_stopped_black_marginal(&self, r: f64) -> Result<f64> {
        match &self.densities {
            StoppedDensities::Strata { black_marginal, .. } => black_marginal.density(&self.kernel, r),
            StoppedDensities::Beta { black_marginal, .. } => black_marginal.density(&[1.0], r),
        }
    }

    /// P(D=1|R=r, M=1, x)
    pub fn race_prob(&self, r: f64, x: &[f64]) -> Result<f64> {
        match self.race_factor {
            RaceFactor::Logistic => {
                let fit = self.race_logistic.as_ref().expect("logistic race factor is fitted");
                predict_prob(fit, &with_r(r, x))
            }
            RaceFactor::DensityBayes => {
                let share = match &self.densities {
                    StoppedDensities::Strata { black_share, .. } => black_share[self.stratum(x)?],
                    StoppedDensities::Beta { black_share, .. } => {
                        predict_prob(black_share.as_ref().expect("share model is fitted"), &with_intercept(x))?
                    }
                };
                let num = self.f_stopped_black(r, x)?;
                let den = self.f_stopped(r, x)?;
                if den < DENSITY_FLOOR {
                    return Err(Error::DensityUnderflow { r });
                }
                Ok((share * num / den).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            }
        }
    }

    /// Kernel-smoothed P(D=1|R=r) over the precinct compositions.
    pub fn composition_smooth(&self, r: f64) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (x, v) in self.smoother_points.iter().zip(&self.smoother_values) {
            let k = self.kernel.kernel((r - x) / self.kernel.bandwidth);
            num += k * v;
            den += k;
        }
        if den == 0.0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(num / den)
    }

    /// Time-weighted KDE f(r) over precinct place values.
    pub fn f_population(&self, r: f64) -> Result<f64> {
        self.population.density(&self.kernel, r)
    }
}

/// f(r|D=1) = P(D=1|R=r) f(r) / P(D=1)
pub fn f_r_given_d1(models: &RapModels, r: f64) -> Result<f64> {
    if !(models.p_black > 0.0) {
        return Err(Error::InvalidArgument("P(D=1) must be positive".into()));
    }
    Ok(models.composition_smooth(r)? * models.f_population(r)? / models.p_black)
}

/// f(r|D=1,x) = f(r|D=1) · f(r|D=1,x,M=1) / f(r|D=1,M=1)
pub fn density_ratio_adjust(f_r_d1: f64, f_stopped_x: f64, f_stopped: f64) -> Result<f64> {
    if !(f_r_d1 > 0.0 && f_stopped_x > 0.0 && f_stopped > 0.0) {
        return Err(Error::ZeroDensity);
    }
    Ok(f_r_d1 * (f_stopped_x / f_stopped))
}

/// The four ratio factors of Ψ(r, x).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiFactors {
    pub outcome: f64,
    pub race: f64,
    pub stopped_density: f64,
    /// f(r0|D=1,x) / f(r|D=1,x)
    pub black_density: f64,
}

impl PsiFactors {
    pub fn product(&self) -> f64 {
        self.outcome * self.race * self.stopped_density * self.black_density
    }
}

fn floor_check(v: f64, r: f64) -> Result<f64> {
    if v < DENSITY_FLOOR {
        return Err(Error::DensityUnderflow { r });
    }
    Ok(v)
}

fn black_density_at(models: &RapModels, r: f64, x: &[f64]) -> Result<f64> {
    let a = floor_check(f_r_given_d1(models, r)?, r)?;
    let b = floor_check(models.f_stopped_black(r, x)?, r)?;
    let c = floor_check(models.f_stopped_black_marginal(r)?, r)?;
    density_ratio_adjust(a, b, c)
}

pub fn psi_factors(models: &RapModels, r: f64, r0: f64, x: &[f64]) -> Result<PsiFactors> {
    models.check_x(x)?;
    models.check_r(r)?;
    models.check_r(r0)?;
    let outcome = models.outcome_prob(r, x)? / models.outcome_prob(r0, x)?;
    let race = models.race_prob(r, x)? / models.race_prob(r0, x)?;
    let stopped_density = floor_check(models.f_stopped(r, x)?, r)? / floor_check(models.f_stopped(r0, x)?, r0)?;
    let black_density = black_density_at(models, r0, x)? / black_density_at(models, r, x)?;
    Ok(PsiFactors {
        outcome,
        race,
        stopped_density,
        black_density,
    })
}

/// Ψ(r, x); exactly 1 at r = r0 since every factor is then a self-ratio.
pub fn psi_conditional(models: &RapModels, r: f64, r0: f64, x: &[f64]) -> Result<f64> {
    Ok(psi_factors(models, r, r0, x)?.product())
}

/// The post-stop outcome ratio alone.
pub fn psi_naive(models: &RapModels, r: f64, r0: f64, x: &[f64]) -> Result<f64> {
    models.check_x(x)?;
    models.check_r(r)?;
    models.check_r(r0)?;
    Ok(models.outcome_prob(r, x)? / models.outcome_prob(r0, x)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveVariant {
    Full,
    Naive,
}

impl std::fmt::Display for CurveVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CurveVariant::Full => "full",
            CurveVariant::Naive => "naive",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveEstimate {
    pub r: Vec<f64>,
    pub estimate: Vec<f64>,
    /// Standard deviation of Ψ(r, X_i) over the marginalization rows.
    pub spread: Vec<f64>,
    pub ci: Option<(Vec<f64>, Vec<f64>)>,
    pub r0: f64,
    pub variant: CurveVariant,
    /// Rows averaged over.
    pub rows_used: usize,
    /// Whether the rows are a seeded subsample of the table.
    pub subsampled: bool,
}

/// `lo, lo + step, ...` up to `hi` inclusive (tolerant to rounding).
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect()
}

/// Default grid 0.2, 0.25, ..., 0.8.
pub fn default_grid() -> Vec<f64> {
    grid(0.2, 0.8, 0.05)
}

pub const DEFAULT_R0: f64 = 0.6;
pub const DEFAULT_SUBSAMPLE_CAP: usize = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub grid: Vec<f64>,
    pub r0: f64,
    pub variant: CurveVariant,
    pub subsample_cap: usize,
    pub seed: u64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            grid: default_grid(),
            r0: DEFAULT_R0,
            variant: CurveVariant::Full,
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            seed: 0,
        }
    }
}

/// Ψ̄(r) = mean of Ψ(r, X_i) (or the naive ratio) over the stopped rows in
/// `rows`, on every grid point.
pub fn psi_curve(models: &RapModels, design: &DesignMatrix, rows: &[usize], opts: &CurveOptions) -> Result<CurveEstimate> {
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    if opts.grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("grid must be strictly ascending".into()));
    }
    let (used, subsampled): (Vec<usize>, bool) = match subsample(rows.len(), opts.subsample_cap, opts.seed) {
        Some(idx) => (idx.iter().map(|&k| rows[k]).collect(), true),
        None => (rows.to_vec(), false),
    };
    let patterns = collapse_patterns(design, &used);
    let points: Vec<Result<(f64, f64)>> = opts
        .grid
        .par_iter()
        .map(|&r| {
            let mut vals = Vec::with_capacity(patterns.len());
            let mut w = Vec::with_capacity(patterns.len());
            for (x, c) in &patterns {
                let v = match opts.variant {
                    CurveVariant::Full => psi_conditional(models, r, opts.r0, x)?,
                    CurveVariant::Naive => psi_naive(models, r, opts.r0, x)?,
                };
                vals.push(v);
                w.push(*c as f64);
            }
            let total: f64 = w.iter().sum();
            let mean = vals.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / total;
            let var = vals.iter().zip(&w).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
            Ok((mean, var.max(0.0).sqrt()))
        })
        .collect();
    let points: Vec<(f64, f64)> = points.into_iter().collect::<Result<_>>()?;
    Ok(CurveEstimate {
        r: opts.grid.clone(),
        estimate: points.iter().map(|p| p.0).collect(),
        spread: points.iter().map(|p| p.1).collect(),
        ci: None,
        r0: opts.r0,
        variant: opts.variant,
        rows_used: used.len(),
        subsampled,
    })
}

/// Full-variant marginal curve.
pub fn psi_marginal(models: &RapModels, design: &DesignMatrix, rows: &[usize], grid: &[f64], r0: f64) -> Result<CurveEstimate> {
    psi_curve(
        models,
        design,
        rows,
        &CurveOptions {
            grid: grid.to_vec(),
            r0,
            variant: CurveVariant::Full,
            ..Default::default()
        },
    )
}

/// Naive-variant marginal curve.
pub fn psi_naive_marginal(models: &RapModels, design: &DesignMatrix, rows: &[usize], grid: &[f64], r0: f64) -> Result<CurveEstimate> {
    psi_curve(
        models,
        design,
        rows,
        &CurveOptions {
            grid: grid.to_vec(),
            r0,
            variant: CurveVariant::Naive,
            ..Default::default()
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// r < r0: expect Ψ ≥ Ψ_naive.
    Below,
    Baseline,
    /// r > r0: expect Ψ ≤ Ψ_naive.
    Above,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundPoint {
    pub r: f64,
    pub full: f64,
    pub naive: f64,
    pub side: Side,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub points: Vec<BoundPoint>,
    pub violations: Vec<f64>,
}

/// Check the one-sided bounds implied by a stop probability that decreases in
/// r: Ψ ≥ Ψ_naive below r0 and Ψ ≤ Ψ_naive above it, up to a relative
/// tolerance.
pub fn monotone_bound_check(full: &CurveEstimate, naive: &CurveEstimate, tolerance: f64) -> Result<BoundReport> {
    if full.r != naive.r || full.r0 != naive.r0 {
        return Err(Error::GridMismatch);
    }
    let mut points = Vec::with_capacity(full.r.len());
    let mut violations = Vec::new();
    for k in 0..full.r.len() {
        let (r, f, n) = (full.r[k], full.estimate[k], naive.estimate[k]);
        let side = if r < full.r0 {
            Side::Below
        } else if r > full.r0 {
            Side::Above
        } else {
            Side::Baseline
        };
        let holds = match side {
            Side::Below => f >= n * (1.0 - tolerance),
            Side::Above => f <= n * (1.0 + tolerance),
            Side::Baseline => true,
        };
        if !holds {
            violations.push(r);
        }
        points.push(BoundPoint {
            r,
            full: f,
            naive: n,
            side,
            holds,
        });
    }
    Ok(BoundReport { points, violations })
}

/// Attach percentile intervals to `curve` from `b` resamples drawn within
/// `groups`; `estimator` maps resampled row indices to a curve.
pub fn bootstrap_curve<F>(
    curve: &CurveEstimate,
    groups: &[Vec<usize>],
    b: usize,
    seed: u64,
    level: f64,
    estimator: F,
) -> Result<CurveEstimate>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    let s = bootstrap_percentile(groups, b, seed, level, estimator)?;
    Ok(CurveEstimate {
        ci: Some((s.lo, s.hi)),
        ..curve.clone()
    })
}

/// Fit and evaluate a curve on an encounter table, with optional bootstrap
/// intervals (rows resampled within precinct, models refitted each time).
pub fn estimate_curve(
    table: &EncounterTable,
    design: &DesignMatrix,
    geo: &Geography,
    fit: &RapOptions,
    curve: &CurveOptions,
    bootstrap: usize,
    level: f64,
) -> Result<(RapModels, CurveEstimate)> {
    let stopped: Vec<usize> = (0..table.n()).filter(|&i| table.m()[i] == 1).collect();
    let models = fit_rap_models(table, design, geo, fit)?;
    let est = psi_curve(&models, design, &stopped, curve)?;
    if bootstrap == 0 {
        return Ok((models, est));
    }
    let mut groups = vec![Vec::new(); table.q()];
    for &i in &stopped {
        groups[table.precinct()[i] as usize].push(i);
    }
    let fixed = RapOptions {
        r_domain: Some(models.domain),
        ..fit.clone()
    };
    let est = bootstrap_curve(&est, &groups, bootstrap, curve.seed ^ 0xb007, level, |idx| {
        let t = table.select(idx);
        let dm = design.select_rows(idx);
        let m = fit_rap_models(&t, &dm, geo, &fixed)?;
        let all: Vec<usize> = (0..idx.len()).collect();
        Ok(psi_curve(&m, &dm, &all, curve)?.estimate)
    })?;
    Ok((models, est))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_ratio_examples() {
        assert_eq!(density_ratio_adjust(0.8, 1.5, 1.5).unwrap(), 0.8);
        assert!((density_ratio_adjust(1.2, 0.7, 1.2).unwrap() - 0.7).abs() < 1e-15);
        assert!((density_ratio_adjust(0.8, 1.5, 1.2).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(density_ratio_adjust(0.0, 1.0, 1.0), Err(Error::ZeroDensity)));
    }

    #[test]
    fn default_grid_values() {
        let g = default_grid();
        assert_eq!(g.len(), 13);
        assert_eq!(g[0], 0.2);
        assert_eq!(g[8], 0.6);
        assert_eq!(g[12], 0.8);
    }

    #[test]
    fn bound_check_equal_curves() {
        let c = CurveEstimate {
            r: vec![0.2, 0.6, 0.8],
            estimate: vec![1.2, 1.0, 0.9],
            spread: vec![0.0; 3],
            ci: None,
            r0: 0.6,
            variant: CurveVariant::Full,
            rows_used: 1,
            subsampled: false,
        };
        let rep = monotone_bound_check(&c, &c, 0.0).unwrap();
        assert!(rep.violations.is_empty());
        let mut other = c.clone();
        other.r0 = 0.5;
        assert!(matches!(monotone_bound_check(&c, &other, 0.0), Err(Error::GridMismatch)));
    }
}

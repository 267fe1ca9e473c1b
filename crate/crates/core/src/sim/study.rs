//! Repeated simulation with percent bias and MSE against the known truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{crr_truth, generate, psi_truth, DgpSpec};
use crate::crr::{crr_conditional, fit_crr_models, CrrOptions};
use crate::data::{encode, encode_pattern};
use crate::error::{Error, Result};
use crate::rap::{default_grid, fit_rap_models, psi_conditional, RapOptions, DEFAULT_R0};
use crate::resample::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyEstimand {
    /// Ψ(r, x) over the grid, r0 left out.
    Psi,
    /// CRR(x) in every precinct, with π_j the population share.
    Crr,
}

impl std::fmt::Display for StudyEstimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StudyEstimand::Psi => "psi",
            StudyEstimand::Crr => "crr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Covariate level at which both estimands are evaluated.
    pub x: String,
    pub grid: Vec<f64>,
    pub r0: f64,
    pub rap: RapOptions,
    pub crr: CrrOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            x: "2".into(),
            grid: default_grid(),
            r0: DEFAULT_R0,
            rap: RapOptions {
                r_domain: Some((0.2, 0.8)),
                ..RapOptions::default()
            },
            crr: CrrOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    /// One value per evaluation point; NaN where the estimator failed at that
    /// point (e.g. a precinct below the stop floor).
    pub estimates: Vec<f64>,
    /// Set when the whole replicate failed; `estimates` is then all NaN.
    pub error: Option<String>,
}

impl ReplicateResult {
    /// Mean over points of 100 |est − truth| / |truth|.
    pub fn percent_bias(&self, truth: &[f64]) -> f64 {
        mean_finite(self.estimates.iter().zip(truth).map(|(e, t)| 100.0 * (e - t).abs() / t.abs()))
    }

    /// Mean over points of (est − truth)².
    pub fn mse(&self, truth: &[f64]) -> f64 {
        mean_finite(self.estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)))
    }
}

fn mean_finite(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.filter(|x| x.is_finite()).fold((0.0, 0usize), |a, x| (a.0 + x, a.1 + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub estimand: StudyEstimand,
    /// Grid values of r, or precinct ids.
    pub points: Vec<f64>,
    pub truth: Vec<f64>,
    pub replicates: Vec<ReplicateResult>,
    /// Per point: mean over replicates of the estimate.
    pub mean_estimate: Vec<f64>,
    /// Mean over points of 100 |mean estimate − truth| / |truth|.
    pub percent_bias: f64,
    /// Mean over points and replicates of (estimate − truth)².
    pub mse: f64,
}

impl MetricsReport {
    pub fn from_replicates(
        estimand: StudyEstimand,
        points: Vec<f64>,
        truth: Vec<f64>,
        replicates: Vec<ReplicateResult>,
    ) -> Result<MetricsReport> {
        if replicates.is_empty() {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if points.len() != truth.len() || replicates.iter().any(|r| r.estimates.len() != points.len()) {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: truth.len(),
            });
        }
        let (percent_bias, mse, mean_estimate) = aggregate(&truth, &replicates);
        Ok(MetricsReport {
            estimand,
            points,
            truth,
            replicates,
            mean_estimate,
            percent_bias,
            mse,
        })
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.error.is_some()).count()
    }

    /// (percent bias, MSE) recomputed from the stored replicate values.
    pub fn recompute(&self) -> (f64, f64) {
        let (pb, mse, _) = aggregate(&self.truth, &self.replicates);
        (pb, mse)
    }
}

fn aggregate(truth: &[f64], reps: &[ReplicateResult]) -> (f64, f64, Vec<f64>) {
    let k = truth.len();
    let mean_estimate: Vec<f64> = (0..k).map(|j| mean_finite(reps.iter().map(|r| r.estimates[j]))).collect();
    let percent_bias = mean_finite(mean_estimate.iter().zip(truth).map(|(e, t)| 100.0 * (e - t).abs() / t.abs()));
    let mse = mean_finite((0..k).map(|j| mean_finite(reps.iter().map(|r| (r.estimates[j] - truth[j]).powi(2)))));
    (percent_bias, mse, mean_estimate)
}

fn one_replicate(spec: &DgpSpec, estimands: &[StudyEstimand], opts: &StudyOptions, psi_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let sim = generate(spec)?;
    let table = sim.administrative();
    let schema = sim.schema().resolve(&table)?;
    let design = encode(&table, &schema)?;
    let x = encode_pattern(&schema, &design, &[("x", &opts.x)])?;
    let geo = sim.geography()?;
    estimands
        .iter()
        .map(|e| match e {
            StudyEstimand::Psi => {
                let models = fit_rap_models(&table, &design, &geo, &opts.rap)?;
                Ok(psi_grid
                    .iter()
                    .map(|&r| psi_conditional(&models, r, opts.r0, &x).unwrap_or(f64::NAN))
                    .collect())
            }
            StudyEstimand::Crr => {
                let mut out = vec![f64::NAN; spec.q];
                for (j, m) in fit_crr_models(&table, &design, &opts.crr)? {
                    if let Ok(m) = m {
                        out[j] = crr_conditional(&m.with_composition(sim.precinct_r[j]), &x).unwrap_or(f64::NAN);
                    }
                }
                Ok(out)
            }
        })
        .collect()
}

/// Run `reps` replicates of `spec`, replicate k drawing with seed
/// `derive_seed(spec.seed, k)`, and score each estimand against its truth.
/// A failing replicate is recorded and left out of the averages.
pub fn run_study(spec: &DgpSpec, estimands: &[StudyEstimand], opts: &StudyOptions, reps: usize) -> Result<Vec<MetricsReport>> {
    spec.validate()?;
    if reps < 1 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    let x: f64 = opts
        .x
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("x = {:?} is not numeric", opts.x)))?;
    let psi_grid: Vec<f64> = opts.grid.iter().copied().filter(|r| (r - opts.r0).abs() > 1e-12).collect();
    let mut targets = Vec::new();
    for e in estimands {
        let (points, truth) = match e {
            StudyEstimand::Psi => {
                let t: Option<Vec<f64>> = psi_grid.iter().map(|&r| psi_truth(&spec.kind, x, r, opts.r0)).collect();
                (psi_grid.clone(), t)
            }
            StudyEstimand::Crr => {
                let t = crr_truth(&spec.kind).map(|v| vec![v; spec.q]);
                ((0..spec.q).map(|j| j as f64).collect(), t)
            }
        };
        let truth = truth.ok_or_else(|| Error::InvalidArgument(format!("{} has no closed-form truth for {e}", spec.kind.name())))?;
        targets.push((points, truth));
    }

    let results: Vec<(u64, Result<Vec<Vec<f64>>>)> = (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(spec.seed, k);
            let s = DgpSpec { seed, ..spec.clone() };
            (seed, one_replicate(&s, estimands, opts, &psi_grid))
        })
        .collect();

    targets
        .into_iter()
        .enumerate()
        .map(|(e, (points, truth))| {
            let replicates = results
                .iter()
                .enumerate()
                .map(|(k, (seed, res))| match res {
                    Ok(v) => ReplicateResult {
                        replicate: k,
                        seed: *seed,
                        estimates: v[e].clone(),
                        error: None,
                    },
                    Err(err) => ReplicateResult {
                        replicate: k,
                        seed: *seed,
                        estimates: vec![f64::NAN; points.len()],
                        error: Some(err.to_string()),
                    },
                })
                .collect();
            MetricsReport::from_replicates(estimands[e], points, truth, replicates)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_equal_to_estimate() {
        let truth = vec![1.3, 0.9, 1.1];
        let rep = ReplicateResult {
            replicate: 0,
            seed: 1,
            estimates: truth.clone(),
            error: None,
        };
        let m = MetricsReport::from_replicates(StudyEstimand::Psi, vec![0.2, 0.4, 0.8], truth, vec![rep]).unwrap();
        assert_eq!(m.percent_bias, 0.0);
        assert_eq!(m.mse, 0.0);
    }

    #[test]
    fn aggregates_by_hand() {
        let truth = vec![1.0, 2.0];
        let reps = vec![
            ReplicateResult {
                replicate: 0,
                seed: 0,
                estimates: vec![1.1, 2.0],
                error: None,
            },
            ReplicateResult {
                replicate: 1,
                seed: 0,
                estimates: vec![1.1, 1.6],
                error: None,
            },
        ];
        let m = MetricsReport::from_replicates(StudyEstimand::Crr, vec![0.0, 1.0], truth, reps).unwrap();
        // means 1.1 and 1.8: 10% and 10%
        assert!((m.percent_bias - 10.0).abs() < 1e-12);
        let mse = (0.01 + 0.0 + 0.01 + 0.16) / 4.0;
        assert!((m.mse - mse).abs() < 1e-15);
    }

    #[test]
    fn zero_replicates_rejected() {
        let spec = DgpSpec::new(super::super::DgpKind::Scenario1, 100, 2, 0).unwrap();
        assert!(run_study(&spec, &[StudyEstimand::Crr], &StudyOptions::default(), 0).is_err());
    }
}

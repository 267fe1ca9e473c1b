//! Seeded data-generating processes and the simulation study harness.
//!
//! [`generate`] draws a full population table (stopped and unstopped rows,
//! with the confounder when the process has one). Potential outcomes are kept
//! in a separate [`PotentialOutcomes`] value that estimators never see; they
//! receive [`SimulatedData::administrative`].

mod study;
mod sweep;
mod truth;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Covariate, CovariateSchema, EncounterTable, TableMode, TableParts};
use crate::error::{Error, Result};
use crate::mobility::MobilityModel;
use crate::rap::Geography;
use crate::report::{fmt_num, write_csv};
use crate::resample::stream_rng;
use crate::stats::sigmoid;

pub use study::{run_study, MetricsReport, ReplicateResult, StudyEstimand, StudyOptions};
pub use sweep::{confounding_xi, interpretability_sweep, r_quartiles, ratio_xi, SweepDgp, SweepPoint};
pub use truth::{crr_truth, psi_truth};

/// Which process to draw from. Strength `a` and the sign vector only apply to
/// the interpretability processes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DgpKind {
    /// Precinct-level race shares, stop rate free of r.
    Scenario1,
    /// As scenario 1 plus a uniform confounder of race and force.
    Scenario2,
    /// Scenario 1 with a stop rate monotone in r.
    MonotoneStop { increasing: bool },
    /// Unmeasured binary confounder of R, D, M and Y.
    InterpConfounding { a: f64, signs: Vec<f64> },
    /// Covariate interactions in the stop model that break the density ratio
    /// transfer between stopped and full populations.
    InterpRatio { a: f64, signs: Vec<f64> },
    /// Continuous X and U entering every stage.
    #[serde(rename = "benchmark_appH", alias = "benchmark_apph")]
    BenchmarkAppH,
    /// U affects R only.
    NoBiasROnly,
    /// U affects Y only.
    NoBiasYOnly,
}

impl DgpKind {
    pub fn name(&self) -> &'static str {
        match self {
            DgpKind::Scenario1 => "scenario1",
            DgpKind::Scenario2 => "scenario2",
            DgpKind::MonotoneStop { .. } => "monotone_stop",
            DgpKind::InterpConfounding { .. } => "interp_confounding",
            DgpKind::InterpRatio { .. } => "interp_ratio",
            DgpKind::BenchmarkAppH => "benchmark_appH",
            DgpKind::NoBiasROnly => "no_bias_r_only",
            DgpKind::NoBiasYOnly => "no_bias_y_only",
        }
    }

    /// Precinct processes draw a precinct per row; the rest are row-level
    /// with a continuous R and a single precinct.
    pub fn is_precinct_level(&self) -> bool {
        matches!(self, DgpKind::Scenario1 | DgpKind::Scenario2 | DgpKind::MonotoneStop { .. })
    }

    pub fn has_confounder(&self) -> bool {
        !matches!(
            self,
            DgpKind::Scenario1 | DgpKind::MonotoneStop { .. } | DgpKind::InterpRatio { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let check = |a: f64, hi: f64, signs: &[f64], len: usize| -> Result<()> {
            if !(0.0..=hi).contains(&a) {
                return Err(Error::InvalidArgument(format!("strength a = {a} outside [0, {hi}]")));
            }
            if signs.len() != len || signs.iter().any(|s| *s != 1.0 && *s != -1.0) {
                return Err(Error::InvalidArgument(format!("sign vector must have {len} entries of ±1")));
            }
            Ok(())
        };
        match self {
            DgpKind::InterpConfounding { a, signs } => check(*a, 1.0, signs, 4),
            DgpKind::InterpRatio { a, signs } => check(*a, 0.5, signs, 3),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub kind: DgpKind,
    pub n: usize,
    /// Number of precincts; 1 for the row-level processes.
    pub q: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, q: usize, seed: u64) -> Result<DgpSpec> {
        let s = DgpSpec { kind, n, q, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 || self.n < self.q {
            return Err(Error::InvalidArgument(format!(
                "need n ≥ q ≥ 1, got n = {}, q = {}",
                self.n, self.q
            )));
        }
        if !self.kind.is_precinct_level() && self.q != 1 {
            return Err(Error::InvalidArgument(format!(
                "{} draws a single precinct; set q = 1",
                self.kind.name()
            )));
        }
        self.kind.validate()
    }
}

/// Per-row inputs to the rate formulas. `precinct` is 0-based; the formulas
/// use q_i = precinct + 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowState {
    pub precinct: usize,
    pub q: usize,
    pub x: f64,
    pub u: f64,
    pub r: f64,
}

impl DgpKind {
    /// P(D = 1 | row). For the precinct processes, r is not used.
    pub fn race_prob(&self, s: &RowState) -> f64 {
        let qi = (s.precinct + 1) as f64 / s.q as f64;
        match self {
            DgpKind::Scenario1 | DgpKind::MonotoneStop { .. } => sigmoid(2.0 * qi - 1.0),
            DgpKind::Scenario2 => sigmoid(s.u + 2.0 * qi - 1.0),
            DgpKind::InterpConfounding { a, signs } => sigmoid(signs[1] * a * s.u + s.x),
            DgpKind::InterpRatio { .. } => sigmoid(0.3 * s.x - 0.3 * s.r),
            DgpKind::BenchmarkAppH => sigmoid(s.x + s.u + 0.5 * s.r),
            DgpKind::NoBiasROnly | DgpKind::NoBiasYOnly => sigmoid(s.x + 0.5 * s.r),
        }
    }

    /// P(M(d) = 1 | row)
    pub fn stop_prob(&self, s: &RowState, d: u8) -> f64 {
        let d = d as f64;
        match self {
            DgpKind::Scenario1 | DgpKind::Scenario2 => sigmoid(s.x - 2.5),
            DgpKind::MonotoneStop { increasing } => {
                let f = if *increasing {
                    (1.5 * (s.r - 0.8)).exp()
                } else {
                    (-1.5 * (s.r - 0.2)).exp()
                };
                (sigmoid(s.x - 2.5) * f).min(1.0)
            }
            DgpKind::InterpConfounding { a, signs } => sigmoid(signs[2] * a * s.u + s.x + 0.5 * d + s.r + s.r * s.x),
            DgpKind::InterpRatio { a, signs } => {
                sigmoid(0.3 * s.x - 0.3 * s.r + 0.3 * d + signs[0] * a * d * s.x + signs[1] * a * s.r * s.x)
            }
            DgpKind::BenchmarkAppH => sigmoid(s.x + s.u + 0.5 * s.r + 0.5 * d),
            DgpKind::NoBiasROnly | DgpKind::NoBiasYOnly => sigmoid(s.x + 0.5 * s.r + 0.5 * d),
        }
    }

    /// P(Y(d, 1) = 1 | row): force given a stop.
    pub fn force_prob(&self, s: &RowState, d: u8) -> f64 {
        let d = d as f64;
        match self {
            DgpKind::Scenario1 | DgpKind::MonotoneStop { .. } => sigmoid(s.x - 0.5 - 2.0 * s.r),
            DgpKind::Scenario2 => s.u * sigmoid(s.x - 0.5 - 2.0 * s.r),
            DgpKind::InterpConfounding { a, signs } => sigmoid(-0.6 + signs[3] * a * s.u + s.r + 0.5 * s.x + 0.5 + 0.5 * d + s.r * s.x),
            DgpKind::InterpRatio { a, signs } => sigmoid(-0.6 + 0.5 * s.r - 0.5 * s.x + 0.5 + 0.5 * d + signs[2] * a * s.r * s.x),
            DgpKind::BenchmarkAppH => sigmoid(s.x - s.u + 0.5 * s.r + 0.5 * d + 0.5),
            DgpKind::NoBiasYOnly => sigmoid(s.x - s.u + 0.5 * s.r + 0.5 * d + 0.5),
            DgpKind::NoBiasROnly => sigmoid(s.x + 0.5 * s.r + 0.5 * d + 0.5),
        }
    }
}

/// Potential outcomes of every row. Only oracles and metrics read these.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialOutcomes {
    y1: Vec<u8>,
    y0: Vec<u8>,
    m1: Vec<u8>,
    m0: Vec<u8>,
}

impl PotentialOutcomes {
    pub fn y1(&self) -> &[u8] {
        &self.y1
    }
    pub fn y0(&self) -> &[u8] {
        &self.y0
    }
    pub fn m1(&self) -> &[u8] {
        &self.m1
    }
    pub fn m0(&self) -> &[u8] {
        &self.m0
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub spec: DgpSpec,
    /// Full population, including unstopped rows and `u` when present.
    pub table: EncounterTable,
    truth: PotentialOutcomes,
    /// Population share of D = 1 in each precinct.
    pub precinct_r: Vec<f64>,
    /// Population count of each precinct.
    pub precinct_n: Vec<f64>,
    /// (min, max) of the untransformed R' for the confounding process.
    pub r_scale: Option<(f64, f64)>,
}

impl SimulatedData {
    /// Stopped rows without `u`: what estimators receive.
    pub fn administrative(&self) -> EncounterTable {
        self.table.administrative()
    }

    pub fn truth(&self) -> &PotentialOutcomes {
        &self.truth
    }

    pub fn schema(&self) -> CovariateSchema {
        if self.spec.kind.is_precinct_level() {
            CovariateSchema::new().categorical_with_levels("x", &["1", "2", "3", "4"])
        } else {
            CovariateSchema::new().continuous("x")
        }
    }

    /// Compositions equal to the population shares (no mobility).
    pub fn mobility(&self) -> Result<MobilityModel> {
        MobilityModel::census(&self.precinct_r, &self.precinct_n)
    }

    pub fn geography(&self) -> Result<Geography> {
        Geography::new(self.precinct_r.clone(), self.precinct_r.clone(), self.precinct_n.clone())
    }

    /// `row,y1,y0,m1,m0[,u]` for every row of the full table.
    pub fn write_truth(&self, path: &Path) -> Result<()> {
        let u = self.table.u();
        let mut header = vec!["row", "y1", "y0", "m1", "m0"];
        if u.is_some() {
            header.push("u");
        }
        let rows: Vec<Vec<String>> = (0..self.table.n())
            .map(|i| {
                let t = &self.truth;
                let mut row = vec![
                    i.to_string(),
                    t.y1[i].to_string(),
                    t.y0[i].to_string(),
                    t.m1[i].to_string(),
                    t.m0[i].to_string(),
                ];
                if let Some(u) = u {
                    row.push(fmt_num(u[i]));
                }
                row
            })
            .collect();
        write_csv(path, &header, &rows)
    }
}

struct Draws {
    precinct: Vec<u32>,
    x: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    d: Vec<u8>,
}

/// Draw a full population table.
pub fn generate(spec: &DgpSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let kind = &spec.kind;
    let n = spec.n;
    let q = spec.q;
    let mut r_scale = None;

    // Race and place first; outcomes depend on R.
    let draws = if kind.is_precinct_level() {
        let mut dr = Draws {
            precinct: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            r: vec![0.0; n],
            d: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let p = rng.random_range(0..q);
            let x = rng.random_range(1..=4) as f64;
            let u = if *kind == DgpKind::Scenario2 { rng.random::<f64>() } else { 0.0 };
            let s = RowState {
                precinct: p,
                q,
                x,
                u,
                r: 0.0,
            };
            let d = (rng.random::<f64>() < kind.race_prob(&s)) as u8;
            dr.precinct.push(p as u32);
            dr.x.push(x);
            dr.u.push(u);
            dr.d.push(d);
        }
        dr
    } else {
        let mut x = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let (ui, ri) = match kind {
                DgpKind::InterpConfounding { a, signs } => {
                    let ui = (rng.random::<f64>() < 0.5) as u8 as f64;
                    (ui, signs[0] * a * ui + xi + e)
                }
                DgpKind::InterpRatio { .. } => (0.0, -0.5 * xi + e),
                _ => {
                    let ui: f64 = rng.sample(StandardNormal);
                    let ri = match kind {
                        DgpKind::NoBiasYOnly => xi + e,
                        _ => xi + ui + e,
                    };
                    (ui, ri)
                }
            };
            x.push(xi);
            u.push(ui);
            r.push(ri);
        }
        if matches!(kind, DgpKind::InterpConfounding { .. }) {
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            r.iter_mut().for_each(|v| *v = 0.1 + (*v - lo) / (1.2 * (hi - lo)));
            r_scale = Some((lo, hi));
        }
        let d = (0..n)
            .map(|i| {
                let s = RowState {
                    precinct: 0,
                    q: 1,
                    x: x[i],
                    u: u[i],
                    r: r[i],
                };
                (rng.random::<f64>() < kind.race_prob(&s)) as u8
            })
            .collect();
        Draws {
            precinct: vec![0; n],
            x,
            u,
            r,
            d,
        }
    };
    let Draws { precinct, x, u, mut r, d } = draws;

    let mut precinct_n = vec![0.0; q];
    let mut black = vec![0.0; q];
    for i in 0..n {
        precinct_n[precinct[i] as usize] += 1.0;
        black[precinct[i] as usize] += d[i] as f64;
    }
    let overall = black.iter().sum::<f64>() / n as f64;
    let precinct_r: Vec<f64> = if kind.is_precinct_level() {
        let shares: Vec<f64> = (0..q)
            .map(|j| if precinct_n[j] > 0.0 { black[j] / precinct_n[j] } else { overall })
            .collect();
        for i in 0..n {
            r[i] = shares[precinct[i] as usize];
        }
        shares
    } else {
        vec![r.iter().sum::<f64>() / n as f64]
    };

    // One uniform per stage, shared across d, so M(0) = M(1) and Y*(0) =
    // Y*(1) whenever the rates agree.
    let (mut y1, mut y0, mut m1, mut m0) = (vec![0u8; n], vec![0u8; n], vec![0u8; n], vec![0u8; n]);
    let (mut y, mut m) = (vec![0u8; n], vec![0u8; n]);
    for i in 0..n {
        let s = RowState {
            precinct: precinct[i] as usize,
            q,
            x: x[i],
            u: u[i],
            r: r[i],
        };
        let vm: f64 = rng.random();
        let vy: f64 = rng.random();
        m1[i] = (vm < kind.stop_prob(&s, 1)) as u8;
        m0[i] = (vm < kind.stop_prob(&s, 0)) as u8;
        y1[i] = m1[i] * (vy < kind.force_prob(&s, 1)) as u8;
        y0[i] = m0[i] * (vy < kind.force_prob(&s, 0)) as u8;
        (m[i], y[i]) = if d[i] == 1 { (m1[i], y1[i]) } else { (m0[i], y0[i]) };
    }

    let x_cov = if kind.is_precinct_level() {
        let labels: Vec<String> = x.iter().map(|v| format!("{}", *v as i64)).collect();
        Covariate::categorical_from_labels("x", &labels)
    } else {
        Covariate::continuous("x", x)
    };
    let table = EncounterTable::new(
        TableParts {
            y,
            m,
            d,
            precinct,
            covariates: vec![x_cov],
            u: kind.has_confounder().then_some(u),
            r: Some(r),
            q: Some(q),
        },
        TableMode::Full,
    )?;
    Ok(SimulatedData {
        spec: spec.clone(),
        table,
        truth: PotentialOutcomes { y1, y0, m1, m0 },
        precinct_r,
        precinct_n,
        r_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(DgpSpec::new(DgpKind::Scenario1, 10, 35, 1).is_err());
        assert!(DgpSpec::new(DgpKind::Scenario1, 10, 0, 1).is_err());
        assert!(DgpSpec::new(DgpKind::BenchmarkAppH, 10, 2, 1).is_err());
        let bad = DgpKind::InterpRatio {
            a: 0.6,
            signs: vec![1.0; 3],
        };
        assert!(DgpSpec::new(bad, 10, 1, 1).is_err());
        let bad = DgpKind::InterpConfounding {
            a: 0.5,
            signs: vec![1.0; 3],
        };
        assert!(DgpSpec::new(bad, 10, 1, 1).is_err());
    }

    #[test]
    fn same_seed_same_table() {
        let spec = DgpSpec::new(DgpKind::Scenario2, 2000, 5, 9).unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn administrative_view_hides_truth_inputs() {
        let spec = DgpSpec::new(DgpKind::Scenario2, 3000, 5, 2).unwrap();
        let sim = generate(&spec).unwrap();
        let adm = sim.administrative();
        assert!(adm.u().is_none());
        assert!(adm.m().iter().all(|&m| m == 1));
        assert_eq!(adm.mode(), TableMode::Administrative);
    }

    #[test]
    fn confounding_r_rescaled() {
        let kind = DgpKind::InterpConfounding {
            a: 1.0,
            signs: vec![1.0, -1.0, 1.0, -1.0],
        };
        let sim = generate(&DgpSpec::new(kind, 5000, 1, 3).unwrap()).unwrap();
        let r = sim.table.r().unwrap();
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 0.1).abs() < 1e-12);
        assert!((hi - (0.1 + 1.0 / 1.2)).abs() < 1e-12);
    }
}

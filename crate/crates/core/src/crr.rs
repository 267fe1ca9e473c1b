//! Precinct-level causal risk ratio of force for Black versus white civilians.
//!
//! With administrative data only, the ratio is identified as the product of
//! three factors: the post-stop outcome ratio, the odds of being Black among
//! those stopped, and the inverse odds of being Black among those present,
//! where the latter comes from the race-ratio rearrangement
//! P(D=d|x) = P(D=d|x, M=1) · P(D=d) / P(D=d|M=1).

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{collapse_patterns, DesignMatrix, EncounterTable};
use crate::error::{Error, Result};
use crate::resample::bootstrap_percentile;
use crate::stats::{fit_logistic, predict_prob, GlmFit};

const DENOM_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrrVariant {
    /// π_j from mobility flows.
    Mobility,
    /// Residential p_j.
    Census,
    /// π from α I + (1 − α)/q 11ᵀ.
    Blend(f64),
    /// Post-stop outcome ratio only.
    Naive,
}

impl fmt::Display for CrrVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrrVariant::Mobility => write!(f, "mobility"),
            CrrVariant::Census => write!(f, "census"),
            CrrVariant::Blend(a) => write!(f, "blend({a})"),
            CrrVariant::Naive => write!(f, "naive"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeForm {
    /// One logistic model with D as a covariate.
    #[default]
    Single,
    /// Separate fits for D = 1 and D = 0 rows.
    Stratified,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaceScope {
    /// P(D=1|M=1,X) fitted separately in each precinct.
    #[default]
    PerPrecinct,
    /// One fit over all precincts with precinct indicators.
    Pooled,
}

#[derive(Clone, Debug)]
pub enum OutcomeModel {
    /// Design `[1, d, x...]`.
    Single(GlmFit),
    /// Designs `[1, x...]` for D = 1 and D = 0 rows.
    Stratified { black: GlmFit, white: GlmFit },
}

#[derive(Clone, Debug)]
pub struct CrrModels {
    pub precinct: usize,
    pub outcome: OutcomeModel,
    /// Design `[1, x..., extra...]`.
    pub race: Arc<GlmFit>,
    /// Trailing race-design entries for this precinct (pooled indicators).
    pub race_extra: Vec<f64>,
    /// Empirical P(D=1|M=1) in the precinct.
    pub stopped_share: f64,
    /// P(D=1) among people present in the precinct.
    pub composition: f64,
}

impl CrrModels {
    pub fn with_composition(&self, composition: f64) -> CrrModels {
        CrrModels {
            composition,
            ..self.clone()
        }
    }

    /// (E(Y|M=1,D=1,x), E(Y|M=1,D=0,x))
    pub fn outcome_probs(&self, x: &[f64]) -> Result<(f64, f64)> {
        match &self.outcome {
            OutcomeModel::Single(fit) => {
                let mut row = Vec::with_capacity(x.len() + 2);
                row.extend_from_slice(&[1.0, 1.0]);
                row.extend_from_slice(x);
                let p1 = predict_prob(fit, &row)?;
                row[1] = 0.0;
                Ok((p1, predict_prob(fit, &row)?))
            }
            OutcomeModel::Stratified { black, white } => {
                let mut row = Vec::with_capacity(x.len() + 1);
                row.push(1.0);
                row.extend_from_slice(x);
                Ok((predict_prob(black, &row)?, predict_prob(white, &row)?))
            }
        }
    }

    /// P(D=1|M=1,x)
    pub fn stopped_race_prob(&self, x: &[f64]) -> Result<f64> {
        let mut row = Vec::with_capacity(1 + x.len() + self.race_extra.len());
        row.push(1.0);
        row.extend_from_slice(x);
        row.extend_from_slice(&self.race_extra);
        predict_prob(&self.race, &row)
    }
}

/// P(D=d|x) = P(D=d|x,M=1) · P(D=d) / P(D=d|M=1), clamped to
/// (1e-10, 1 − 1e-10). The flag reports whether clamping was applied.
pub fn race_ratio_adjust(pdx_m1: f64, pd: f64, pd_m1: f64) -> (f64, bool) {
    let raw = pdx_m1 * (pd / pd_m1);
    let v = raw.clamp(DENOM_FLOOR, 1.0 - DENOM_FLOOR);
    (v, v != raw)
}

fn check_denominator(v: f64) -> Result<()> {
    if v < DENOM_FLOOR {
        return Err(Error::DegenerateDenominator { value: v });
    }
    Ok(())
}

/// CRR(x) as the product of the outcome ratio, the stopped race odds and the
/// reciprocal population race odds.
pub fn crr_conditional(models: &CrrModels, x: &[f64]) -> Result<f64> {
    let (p1, p0) = models.outcome_probs(x)?;
    check_denominator(p0)?;
    let s1 = models.stopped_race_prob(x)?;
    let s0 = 1.0 - s1;
    check_denominator(s0)?;
    let (q1, _) = race_ratio_adjust(s1, models.composition, models.stopped_share);
    let q0 = 1.0 - q1;
    check_denominator(q1)?;
    Ok((p1 / p0) * (s1 / s0) * (q0 / q1))
}

/// The outcome-ratio factor alone.
pub fn crr_naive(models: &CrrModels, x: &[f64]) -> Result<f64> {
    let (p1, p0) = models.outcome_probs(x)?;
    check_denominator(p0)?;
    Ok(p1 / p0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrrEstimate {
    pub precinct: usize,
    pub variant: CrrVariant,
    pub value: f64,
    pub ci: Option<(f64, f64)>,
}

/// Mean of CRR(X_i) (or the naive ratio) over the given rows of `design`.
pub fn crr_marginal(
    models: &CrrModels,
    design: &DesignMatrix,
    rows: &[usize],
    variant: CrrVariant,
    min_stops: usize,
) -> Result<CrrEstimate> {
    if rows.len() < min_stops.max(1) {
        return Err(Error::InsufficientData {
            precinct: models.precinct,
            rows: rows.len(),
            floor: min_stops,
        });
    }
    let mut total = 0.0;
    for (x, count) in collapse_patterns(design, rows) {
        let v = match variant {
            CrrVariant::Naive => crr_naive(models, &x)?,
            _ => crr_conditional(models, &x)?,
        };
        total += v * count as f64;
    }
    Ok(CrrEstimate {
        precinct: models.precinct,
        variant,
        value: total / rows.len() as f64,
        ci: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrrOptions {
    pub outcome: OutcomeForm,
    pub race: RaceScope,
    /// Precincts with fewer stops are skipped.
    pub min_stops: usize,
    /// Bootstrap replicates; 0 disables intervals.
    pub bootstrap: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for CrrOptions {
    fn default() -> Self {
        CrrOptions {
            outcome: OutcomeForm::Single,
            race: RaceScope::PerPrecinct,
            min_stops: 30,
            bootstrap: 0,
            seed: 0,
            level: 0.95,
        }
    }
}

/// Compositions for each variant, indexed by precinct. `Naive` needs none.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantCompositions(pub Vec<(CrrVariant, Vec<f64>)>);

#[derive(Clone, Debug)]
pub struct CrrReport {
    pub estimates: Vec<CrrEstimate>,
    /// Precincts left out, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub bootstrap_failures: usize,
}

fn fit_outcome(design: &DesignMatrix, table: &EncounterTable, rows: &[usize], form: OutcomeForm) -> Result<OutcomeModel> {
    let sub = design.select_rows(rows);
    let y: Vec<u8> = rows.iter().map(|&i| table.y()[i]).collect();
    match form {
        OutcomeForm::Single => {
            let d: Vec<f64> = rows.iter().map(|&i| table.d()[i] as f64).collect();
            let dm = sub.insert_columns(1, &[("d", &d)])?;
            Ok(OutcomeModel::Single(fit_logistic(&dm, &y, None)?))
        }
        OutcomeForm::Stratified => {
            let split = |race: u8| -> Result<GlmFit> {
                let idx: Vec<usize> = (0..rows.len()).filter(|&k| table.d()[rows[k]] == race).collect();
                let yy: Vec<u8> = idx.iter().map(|&k| y[k]).collect();
                fit_logistic(&sub.select_rows(&idx), &yy, None)
            };
            Ok(OutcomeModel::Stratified {
                black: split(1)?,
                white: split(0)?,
            })
        }
    }
}

fn precinct_indicators(table: &EncounterTable, present: &[usize]) -> Vec<Vec<f64>> {
    // Reference level: the first precinct with data.
    present
        .iter()
        .skip(1)
        .map(|&j| table.precinct().iter().map(|&p| (p as usize == j) as u8 as f64).collect())
        .collect()
}

/// Fit every precinct's models. Returns per-precinct results in precinct order.
fn fit_all(table: &EncounterTable, design: &DesignMatrix, groups: &[Vec<usize>], opts: &CrrOptions) -> Vec<(usize, Result<CrrModels>)> {
    let present: Vec<usize> = (0..groups.len()).filter(|&j| !groups[j].is_empty()).collect();
    let pooled = match opts.race {
        RaceScope::PerPrecinct => None,
        RaceScope::Pooled => {
            let ind = precinct_indicators(table, &present);
            let names: Vec<String> = present.iter().skip(1).map(|j| format!("precinct={j}")).collect();
            let cols: Vec<(&str, &[f64])> = names.iter().map(|s| s.as_str()).zip(ind.iter().map(|v| v.as_slice())).collect();
            let fit = design
                .append_columns(&cols)
                .and_then(|dm| fit_logistic(&dm, table.d(), None))
                .map(Arc::new);
            Some(fit)
        }
    };
    present
        .iter()
        .map(|&j| {
            let rows = &groups[j];
            let res = (|| {
                if rows.len() < opts.min_stops.max(1) {
                    return Err(Error::InsufficientData {
                        precinct: j,
                        rows: rows.len(),
                        floor: opts.min_stops,
                    });
                }
                let outcome = fit_outcome(design, table, rows, opts.outcome)?;
                let (race, race_extra) = match &pooled {
                    None => {
                        let d: Vec<u8> = rows.iter().map(|&i| table.d()[i]).collect();
                        (Arc::new(fit_logistic(&design.select_rows(rows), &d, None)?), Vec::new())
                    }
                    Some(Ok(fit)) => {
                        let extra = present.iter().skip(1).map(|&k| (k == j) as u8 as f64).collect();
                        (fit.clone(), extra)
                    }
                    Some(Err(e)) => return Err(Error::InvalidArgument(format!("pooled race model: {e}"))),
                };
                let stopped_share = rows.iter().map(|&i| table.d()[i] as f64).sum::<f64>() / rows.len() as f64;
                Ok(CrrModels {
                    precinct: j,
                    outcome,
                    race,
                    race_extra,
                    stopped_share,
                    composition: f64::NAN,
                })
            })();
            (j, res)
        })
        .collect()
}

/// Per-precinct models on an administrative table, in precinct order.
/// Precincts without rows are left out.
pub fn fit_crr_models(table: &EncounterTable, design: &DesignMatrix, opts: &CrrOptions) -> Result<Vec<(usize, Result<CrrModels>)>> {
    if design.nrows() != table.n() {
        return Err(Error::DimensionMismatch {
            expected: table.n(),
            found: design.nrows(),
        });
    }
    Ok(fit_all(table, design, &table.rows_by_precinct(), opts))
}

fn evaluate(
    models: &CrrModels,
    design: &DesignMatrix,
    rows: &[usize],
    comps: &VariantCompositions,
    min_stops: usize,
) -> Vec<Result<CrrEstimate>> {
    comps
        .0
        .iter()
        .map(|(variant, pi)| {
            let m = match variant {
                CrrVariant::Naive => models.clone(),
                _ => models.with_composition(pi[models.precinct]),
            };
            crr_marginal(&m, design, rows, *variant, min_stops)
        })
        .collect()
}

/// Marginal CRR for every precinct and variant on an administrative table,
/// with optional stratified bootstrap intervals. `design` encodes the table's
/// covariates (intercept first).
pub fn estimate_crr(table: &EncounterTable, design: &DesignMatrix, comps: &VariantCompositions, opts: &CrrOptions) -> Result<CrrReport> {
    if design.nrows() != table.n() {
        return Err(Error::DimensionMismatch {
            expected: table.n(),
            found: design.nrows(),
        });
    }
    for (v, pi) in &comps.0 {
        if *v != CrrVariant::Naive && pi.len() != table.q() {
            return Err(Error::DimensionMismatch {
                expected: table.q(),
                found: pi.len(),
            });
        }
    }
    let groups = table.rows_by_precinct();
    let fitted = fit_all(table, design, &groups, opts);
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    let per_precinct: Vec<(usize, Result<Vec<CrrEstimate>>)> = fitted
        .into_par_iter()
        .map(|(j, m)| {
            let r = m.and_then(|m| evaluate(&m, design, &groups[j], comps, opts.min_stops).into_iter().collect());
            (j, r)
        })
        .collect();
    for (j, r) in per_precinct {
        match r {
            Ok(v) => estimates.extend(v),
            Err(e) => skipped.push((j, e.to_string())),
        }
    }
    let mut bootstrap_failures = 0;
    if opts.bootstrap > 0 && !estimates.is_empty() {
        let keys: Vec<(usize, usize)> = estimates
            .iter()
            .map(|e| (e.precinct, comps.0.iter().position(|c| c.0 == e.variant).unwrap()))
            .collect();
        let summary = bootstrap_percentile(&groups, opts.bootstrap, opts.seed, opts.level, |idx| {
            let t = table.select(idx);
            let dm = design.select_rows(idx);
            let g = t.rows_by_precinct();
            let mut out = vec![f64::NAN; keys.len()];
            for (j, m) in fit_all(&t, &dm, &g, opts) {
                let Ok(m) = m else { continue };
                for (k, r) in evaluate(&m, &dm, &g[j], comps, opts.min_stops).into_iter().enumerate() {
                    if let (Ok(est), Some(pos)) = (r, keys.iter().position(|&key| key == (j, k))) {
                        out[pos] = est.value;
                    }
                }
            }
            Ok(out)
        })?;
        bootstrap_failures = summary.failures;
        for (k, e) in estimates.iter_mut().enumerate() {
            let (lo, hi) = (summary.lo[k], summary.hi[k]);
            if lo.is_finite() && hi.is_finite() {
                e.ci = Some((lo.min(e.value), hi.max(e.value)));
            }
        }
    }
    Ok(CrrReport {
        estimates,
        skipped,
        bootstrap_failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn race_ratio_examples() {
        assert_eq!(race_ratio_adjust(0.37, 0.2, 0.2).0, 0.37);
        assert!((race_ratio_adjust(0.5, 0.3, 0.5).0 - 0.3).abs() < 1e-15);
        assert!((race_ratio_adjust(0.6, 0.3, 0.5).0 - 0.36).abs() < 1e-15);
        let (v, clamped) = race_ratio_adjust(0.9, 0.9, 0.1);
        assert!(clamped && v == 1.0 - 1e-10);
    }

    fn symmetric_models() -> CrrModels {
        CrrModels {
            precinct: 0,
            outcome: OutcomeModel::Single(GlmFit::from_coefficients(vec![-1.0, 0.0, 0.3])),
            race: Arc::new(GlmFit::from_coefficients(vec![0.0, 0.0])),
            race_extra: Vec::new(),
            stopped_share: 0.5,
            composition: 0.5,
        }
    }

    #[test]
    fn unit_factors_give_one() {
        let m = symmetric_models();
        assert_eq!(crr_conditional(&m, &[1.0]).unwrap(), 1.0);
        assert_eq!(crr_naive(&m, &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn naive_matches_direct_quotient() {
        let mut m = symmetric_models();
        m.outcome = OutcomeModel::Single(GlmFit::from_coefficients(vec![-1.0, 0.7, 0.3]));
        let fit = GlmFit::from_coefficients(vec![-1.0, 0.7, 0.3]);
        let direct = predict_prob(&fit, &[1.0, 1.0, 2.0]).unwrap() / predict_prob(&fit, &[1.0, 0.0, 2.0]).unwrap();
        assert_eq!(crr_naive(&m, &[2.0]).unwrap(), direct);
        // both race-odds factors are 1 here, so the full CRR reduces to it
        assert!((crr_conditional(&m, &[2.0]).unwrap() - direct).abs() < 1e-15);
    }
}

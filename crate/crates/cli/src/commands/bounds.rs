use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use raceplace::data::collapse_patterns;
use raceplace::rap::{
    monotone_bound_check, psi_conditional, CurveOptions, CurveVariant, DensityModel, RaceFactor, Side, DEFAULT_R0, DEFAULT_SUBSAMPLE_CAP,
};
use raceplace::report::fmt_num;
use raceplace::resample::subsample;
use raceplace::sensitivity::{bound_curve, lp_bounds_closed_form, Direction, ParamsSchedule, SensitivityParams};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::rap::{fit_curves, grid_or_default, prepare, rap_options, FitArgs};
use super::{curve_rows, invalid, write, Ctx, DataArgs, CURVE_HEADER};
use crate::meta::write_meta;

#[derive(Args, Debug, Serialize)]
pub struct BoundsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    /// Comma-separated weight ratios γ > 1 for the covariate-shift bounds.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    /// Relative tolerance of the monotone-stop check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// E ξ for a sensitivity band around the curve (writes bound_curve.csv).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_xi: Option<f64>,
    /// sd ξ for the sensitivity band.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd_xi: Option<f64>,
    /// Correlation between Ψ and ξ (worst case when absent).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub input: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub residential: Option<PathBuf>,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub standardize: bool,
    pub grid: Option<Vec<f64>>,
    pub r0: f64,
    pub density: DensityModel,
    pub race_factor: Option<RaceFactor>,
    pub bandwidth: Option<f64>,
    pub r_domain: Option<Vec<f64>>,
    pub subsample_cap: usize,
    pub gammas: Vec<f64>,
    pub tolerance: f64,
    pub mean_xi: Option<f64>,
    pub sd_xi: Option<f64>,
    pub rho: Option<f64>,
    pub seed: u64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            input: None,
            flows: None,
            residential: None,
            categorical: Vec::new(),
            continuous: Vec::new(),
            standardize: false,
            grid: None,
            r0: DEFAULT_R0,
            density: DensityModel::Kde,
            race_factor: None,
            bandwidth: None,
            r_domain: None,
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            gammas: vec![2.0, 5.0],
            tolerance: 0.02,
            mean_xi: None,
            sd_xi: None,
            rho: None,
            seed: 1,
        }
    }
}

pub fn run(ctx: &Ctx, args: &BoundsArgs) -> Result<()> {
    let cfg: BoundsConfig = ctx.resolve("bounds", args)?;
    if let Some(k) = cfg.gammas.iter().position(|g| !(*g > 1.0 && g.is_finite())) {
        return Err(invalid(&format!("gammas[{k}]"), "must exceed 1"));
    }
    if !(cfg.tolerance >= 0.0) {
        return Err(invalid("tolerance", "must be nonnegative"));
    }
    let params = match (cfg.mean_xi, cfg.sd_xi) {
        (None, None) => None,
        (Some(m), Some(s)) => Some(SensitivityParams::new(m, s, cfg.rho).map_err(|e| invalid("mean_xi", e.to_string()))?),
        _ => return Err(invalid("sd_xi", "mean_xi and sd_xi go together")),
    };
    let p = prepare(
        &cfg.input,
        &cfg.flows,
        &cfg.residential,
        &cfg.categorical,
        &cfg.continuous,
        cfg.standardize,
    )?;
    let fit = rap_options(cfg.density, cfg.race_factor, cfg.bandwidth, &cfg.r_domain)?;
    let grid = grid_or_default(&cfg.grid, &p, &fit)?;
    let base = CurveOptions {
        grid: grid.clone(),
        r0: cfg.r0,
        variant: CurveVariant::Full,
        subsample_cap: cfg.subsample_cap,
        seed: cfg.seed,
    };
    let (models, curves) = fit_curves(&p, &fit, &base, &[CurveVariant::Full, CurveVariant::Naive], 0, 0.95)?;
    let (full, naive) = (&curves[0], &curves[1]);

    // Per-row Ψ(r, X_i) over the same rows the curve averages.
    let stopped: Vec<usize> = (0..p.table.n()).collect();
    let rows = match subsample(stopped.len(), cfg.subsample_cap, cfg.seed) {
        Some(idx) => idx,
        None => stopped,
    };
    let patterns = collapse_patterns(&p.design, &rows);
    let mut lp_rows = Vec::new();
    for &r in &grid {
        let mut values = Vec::with_capacity(rows.len());
        for (x, count) in &patterns {
            let v = psi_conditional(&models, r, cfg.r0, x)?;
            values.extend(std::iter::repeat_n(v, *count));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for &g in &cfg.gammas {
            let lo = lp_bounds_closed_form(&values, g, Direction::Min)?;
            let hi = lp_bounds_closed_form(&values, g, Direction::Max)?;
            lp_rows.push(vec![fmt_num(r), fmt_num(g), fmt_num(mean), fmt_num(lo.value), fmt_num(hi.value)]);
        }
    }
    let mut outputs = vec![write(
        &ctx.path("bounds.csv"),
        &["r", "gamma", "estimate", "lower", "upper"],
        &lp_rows,
    )?];

    let check = monotone_bound_check(full, naive, cfg.tolerance)?;
    let mono: Vec<Vec<String>> = check
        .points
        .iter()
        .map(|b| {
            let side = match b.side {
                Side::Below => "below",
                Side::Baseline => "baseline",
                Side::Above => "above",
            };
            vec![fmt_num(b.r), fmt_num(b.full), fmt_num(b.naive), side.into(), b.holds.to_string()]
        })
        .collect();
    outputs.push(write(&ctx.path("monotone.csv"), &["r", "full", "naive", "side", "holds"], &mono)?);
    for r in &check.violations {
        eprintln!("monotone-stop bound violated at r = {}", fmt_num(*r));
    }

    if let Some(params) = params {
        let b = bound_curve(full, &ParamsSchedule::Global(params))?;
        let mut header = CURVE_HEADER.to_vec();
        header.extend(["bound_lo", "bound_hi"]);
        let rows: Vec<Vec<String>> = curve_rows(full)
            .into_iter()
            .enumerate()
            .map(|(k, mut row)| {
                row.push(fmt_num(b.lo[k]));
                row.push(fmt_num(b.hi[k]));
                row
            })
            .collect();
        outputs.push(write(&ctx.path("bound_curve.csv"), &header, &rows)?);
    }
    let violations: Vec<String> = check.violations.iter().map(|v| fmt_num(*v)).collect();
    write_meta(
        &ctx.out,
        "bounds",
        cfg.seed,
        &cfg,
        &outputs,
        json!({ "monotone_violations": violations }),
    )
}

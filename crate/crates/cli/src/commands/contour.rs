use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use raceplace::rap::{CurveOptions, CurveVariant, DensityModel, RaceFactor, DEFAULT_R0, DEFAULT_SUBSAMPLE_CAP};
use raceplace::report::fmt_num;
use raceplace::sensitivity::contour_grid;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::rap::{fit_curves, grid_or_default, prepare, rap_options, FitArgs};
use super::{invalid, pair, write, Ctx, DataArgs};
use crate::meta::write_meta;

#[derive(Args, Debug, Serialize)]
pub struct ContourArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    /// Estimated Ψ̄ at the point of interest; skips estimation when given with --sd-psi.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_bar: Option<f64>,
    /// Spread of Ψ(r, X) at the point of interest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd_psi: Option<f64>,
    /// Point r at which the curve is estimated from data (default: the
    /// lowest default grid point in range).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at_r: Option<f64>,
    /// Range of |E ξ − 1| as `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_range: Option<Vec<f64>>,
    /// Range of sd ξ as `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd_range: Option<Vec<f64>>,
    /// Points per axis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourConfig {
    pub input: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub residential: Option<PathBuf>,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub standardize: bool,
    /// Rejected when set: the contour is for the single point `at_r`.
    pub grid: Option<Vec<f64>>,
    pub r0: f64,
    pub density: DensityModel,
    pub race_factor: Option<RaceFactor>,
    pub bandwidth: Option<f64>,
    pub r_domain: Option<Vec<f64>>,
    pub subsample_cap: usize,
    pub psi_bar: Option<f64>,
    pub sd_psi: Option<f64>,
    pub at_r: Option<f64>,
    pub mean_range: Vec<f64>,
    pub sd_range: Vec<f64>,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        ContourConfig {
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
            psi_bar: None,
            sd_psi: None,
            at_r: None,
            mean_range: vec![0.0, 0.5],
            sd_range: vec![0.0, 0.5],
            resolution: 21,
            seed: 1,
        }
    }
}

pub fn run(ctx: &Ctx, args: &ContourArgs) -> Result<()> {
    let cfg: ContourConfig = ctx.resolve("sens-contour", args)?;
    if cfg.grid.is_some() {
        return Err(invalid("grid", "sens-contour evaluates a single point; use at_r"));
    }
    let mean_range = pair("mean_range", &Some(cfg.mean_range.clone()))?.expect("given");
    let sd_range = pair("sd_range", &Some(cfg.sd_range.clone()))?.expect("given");
    let (psi_bar, sd_psi, at_r) = match (cfg.psi_bar, cfg.sd_psi) {
        (Some(m), Some(s)) => (m, s, None),
        (None, None) => {
            let p = prepare(
                &cfg.input,
                &cfg.flows,
                &cfg.residential,
                &cfg.categorical,
                &cfg.continuous,
                cfg.standardize,
            )?;
            let fit = rap_options(cfg.density, cfg.race_factor, cfg.bandwidth, &cfg.r_domain)?;
            let at_r = match cfg.at_r {
                Some(r) => r,
                None => grid_or_default(&None, &p, &fit)?[0],
            };
            let base = CurveOptions {
                grid: vec![at_r],
                r0: cfg.r0,
                variant: CurveVariant::Full,
                subsample_cap: cfg.subsample_cap,
                seed: cfg.seed,
            };
            let (_, curves) = fit_curves(&p, &fit, &base, &[CurveVariant::Full], 0, 0.95)?;
            (curves[0].estimate[0], curves[0].spread[0], Some(at_r))
        }
        _ => return Err(invalid("sd_psi", "psi_bar and sd_psi go together")),
    };
    let c = contour_grid(psi_bar, sd_psi, mean_range, sd_range, cfg.resolution).map_err(|e| invalid("resolution", e.to_string()))?;
    let mut rows = Vec::with_capacity(c.mean_dev.len() * c.sd.len());
    for (i, &d) in c.mean_dev.iter().enumerate() {
        for (j, &s) in c.sd.iter().enumerate() {
            rows.push(vec![fmt_num(d), fmt_num(s), fmt_num(c.max_bias[i][j])]);
        }
    }
    let out = write(&ctx.path("contour.csv"), &["mean_dev", "sd", "max_bias"], &rows)?;
    let frontier: Vec<Option<f64>> = c.frontier();
    write_meta(
        &ctx.out,
        "sens-contour",
        cfg.seed,
        &cfg,
        &[out],
        json!({
            "psi_bar": psi_bar,
            "sd_psi": sd_psi,
            "at_r": at_r,
            "threshold": c.threshold,
            "explains_away_frontier": frontier,
        }),
    )
}

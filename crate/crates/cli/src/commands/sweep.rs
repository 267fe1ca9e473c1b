use anyhow::Result;
use clap::Args;
use raceplace::rap::grid;
use raceplace::report::{fmt_num, fmt_opt};
use raceplace::sim::{interpretability_sweep, SweepDgp};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{invalid, write, Ctx};
use crate::meta::write_meta;

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    /// Process: interp_confounding or interp_ratio.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp: Option<String>,
    /// Comma-separated strengths a (default: 0 to the maximum in steps of 0.05).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_grid: Option<Vec<f64>>,
    /// Population rows per draw.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub dgp: SweepDgp,
    pub a_grid: Option<Vec<f64>>,
    pub n: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dgp: SweepDgp::InterpConfounding,
            a_grid: None,
            n: 500_000,
            seed: 1,
        }
    }
}

pub fn run(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    let cfg: SweepConfig = ctx.resolve("sweep", args)?;
    let a_grid = cfg.a_grid.clone().unwrap_or_else(|| grid(0.0, cfg.dgp.max_strength(), 0.05));
    if cfg.n < 1 {
        return Err(invalid("n", "must be positive"));
    }
    let points = interpretability_sweep(cfg.dgp, &a_grid, cfg.n, cfg.seed).map_err(|e| invalid("a_grid", e.to_string()))?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                fmt_num(p.a),
                fmt_num(p.xi_mean_dev),
                fmt_num(p.xi_sd),
                fmt_opt(p.xi_tilde_mean_dev),
                fmt_opt(p.xi_tilde_sd),
            ]
        })
        .collect();
    let header = ["a", "xi_mean_dev", "xi_sd", "xi_tilde_mean_dev", "xi_tilde_sd"];
    let out = write(&ctx.path("sweep.csv"), &header, &rows)?;
    write_meta(&ctx.out, "sweep", cfg.seed, &cfg, &[out], json!(null))
}

use anyhow::Result;
use clap::Args;
use raceplace::data::write_encounters;
use raceplace::report::fmt_num;
use raceplace::sim::{generate, DgpKind, DgpSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{invalid, write, Ctx};
use crate::meta::write_meta;

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Process: scenario1, scenario2, monotone_decreasing, monotone_increasing,
    /// interp_confounding, interp_ratio, benchmark_appH, no_bias_r_only,
    /// no_bias_y_only.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp: Option<String>,
    /// Population rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Precincts (1 for the row-level processes).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    /// Violation strength for the interpretability processes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Comma-separated ±1 signs for the interpretability processes.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signs: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: String,
    pub n: usize,
    pub q: usize,
    pub a: f64,
    pub signs: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            dgp: "scenario1".into(),
            n: 100_000,
            q: 35,
            a: 0.0,
            signs: None,
            seed: 1,
        }
    }
}

/// Map a process name (plus strength and signs where they apply) to its kind.
pub fn dgp_kind(name: &str, a: f64, signs: Option<&[f64]>) -> Result<DgpKind> {
    let signs = |k: usize| signs.map(|s| s.to_vec()).unwrap_or_else(|| vec![1.0; k]);
    Ok(match name {
        "scenario1" => DgpKind::Scenario1,
        "scenario2" => DgpKind::Scenario2,
        "monotone_decreasing" => DgpKind::MonotoneStop { increasing: false },
        "monotone_increasing" => DgpKind::MonotoneStop { increasing: true },
        "interp_confounding" => DgpKind::InterpConfounding { a, signs: signs(4) },
        "interp_ratio" => DgpKind::InterpRatio { a, signs: signs(3) },
        "benchmark_appH" | "benchmark_apph" => DgpKind::BenchmarkAppH,
        "no_bias_r_only" => DgpKind::NoBiasROnly,
        "no_bias_y_only" => DgpKind::NoBiasYOnly,
        other => return Err(invalid("dgp", format!("unknown process {other:?}"))),
    })
}

pub fn run(ctx: &Ctx, args: &SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = ctx.resolve("simulate", args)?;
    let kind = dgp_kind(&cfg.dgp, cfg.a, cfg.signs.as_deref())?;
    let q = if kind.is_precinct_level() { cfg.q } else { 1 };
    let spec = DgpSpec::new(kind, cfg.n, q, cfg.seed).map_err(|e| invalid("dgp", e.to_string()))?;
    let sim = generate(&spec)?;

    let mut outputs = Vec::new();
    write_encounters(&sim.table, &ctx.path("encounters.csv"))?;
    outputs.push("encounters.csv".to_string());
    sim.write_truth(&ctx.path("truth.csv"))?;
    outputs.push("truth.csv".to_string());
    if spec.kind.is_precinct_level() {
        let rows: Vec<Vec<String>> = (0..q).map(|j| vec![j.to_string(), fmt_num(sim.precinct_r[j])]).collect();
        outputs.push(write(&ctx.path("residential.csv"), &["precinct", "p"], &rows)?);
        // Nobody leaves their precinct: flows are the diagonal of population counts.
        let rows: Vec<Vec<String>> = (0..q)
            .map(|j| vec![j.to_string(), j.to_string(), fmt_num(sim.precinct_n[j])])
            .collect();
        outputs.push(write(&ctx.path("flows.csv"), &["origin", "dest", "value"], &rows)?);
    }
    let stopped = sim.table.m().iter().filter(|&&m| m == 1).count();
    write_meta(
        &ctx.out,
        "simulate",
        cfg.seed,
        &cfg,
        &outputs,
        json!({ "rows": sim.table.n(), "stopped": stopped, "r_scale": sim.r_scale }),
    )
}

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use raceplace::data::{DesignMatrix, EncounterTable};
use raceplace::rap::{
    default_grid, estimate_curve, row_places, CurveEstimate, CurveOptions, CurveVariant, DensityModel, Geography, RaceFactor, RapModels,
    RapOptions, DEFAULT_R0, DEFAULT_SUBSAMPLE_CAP,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{curve_rows, invalid, pair, write, Ctx, DataArgs, CURVE_HEADER};
use crate::inputs;
use crate::meta::write_meta;

/// Model and grid flags shared by `rap`, `bounds` and `sens-contour`.
#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// Comma-separated grid of r values.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Reference value r0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    /// Density model for R among stopped rows: kde or beta.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
    /// Race factor: logistic or densitybayes (default depends on the density model).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub race_factor: Option<String>,
    /// Kernel bandwidth (rule of thumb when absent).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Allowed range of r as `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_domain: Option<Vec<f64>>,
    /// Rows averaged over are subsampled to at most this many.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample_cap: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct RapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    /// Comma-separated curves: full, naive.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<String>>,
    /// Bootstrap replicates for intervals (0 = none).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    /// Interval level.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RapConfig {
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
    pub variants: Vec<CurveVariant>,
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for RapConfig {
    fn default() -> Self {
        RapConfig {
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
            variants: vec![CurveVariant::Full],
            bootstrap: 0,
            level: 0.95,
            seed: 1,
        }
    }
}

/// Stopped table, design and geography ready for curve fitting.
pub struct Prepared {
    pub table: EncounterTable,
    pub design: DesignMatrix,
    pub geo: Geography,
}

pub fn prepare(
    input: &Option<PathBuf>,
    flows: &Option<PathBuf>,
    residential: &Option<PathBuf>,
    categorical: &[String],
    continuous: &[String],
    standardize: bool,
) -> Result<Prepared> {
    let input = inputs::required("input", input)?;
    let residential = inputs::required("residential", residential)?;
    let schema = inputs::schema(categorical, continuous, standardize);
    let (table, _, design) = inputs::load_administrative(input, &schema)?;
    let geo = inputs::geography(&table, flows.as_deref(), residential)?;
    Ok(Prepared { table, design, geo })
}

pub fn rap_options(
    density: DensityModel,
    race: Option<RaceFactor>,
    bandwidth: Option<f64>,
    r_domain: &Option<Vec<f64>>,
) -> Result<RapOptions> {
    if let Some(h) = bandwidth {
        if !(h > 0.0) {
            return Err(invalid("bandwidth", "must be positive"));
        }
    }
    Ok(RapOptions {
        density,
        race,
        bandwidth,
        r_domain: pair("r_domain", r_domain)?,
    })
}

/// The configured grid, or the default grid cut to the allowed range of r
/// (the `r_domain` option, else the observed range).
pub fn grid_or_default(grid: &Option<Vec<f64>>, p: &Prepared, fit: &RapOptions) -> Result<Vec<f64>> {
    if let Some(g) = grid {
        return Ok(g.clone());
    }
    let (lo, hi) = match fit.r_domain {
        Some(d) => d,
        None => row_places(&p.table, &p.geo)?
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r))),
    };
    let g: Vec<f64> = default_grid().into_iter().filter(|r| (lo..=hi).contains(r)).collect();
    if g.is_empty() {
        return Err(invalid("grid", format!("no default grid point lies in [{lo}, {hi}]; set grid")));
    }
    Ok(g)
}

/// Fit once and evaluate each requested curve. With `bootstrap > 0` every
/// variant gets intervals from its own resampling run.
pub fn fit_curves(
    p: &Prepared,
    fit: &RapOptions,
    base: &CurveOptions,
    variants: &[CurveVariant],
    bootstrap: usize,
    level: f64,
) -> Result<(RapModels, Vec<CurveEstimate>)> {
    if variants.is_empty() {
        return Err(invalid("variants", "at least one curve is needed"));
    }
    let mut models = None;
    let mut curves = Vec::new();
    for &variant in variants {
        let opts = CurveOptions { variant, ..base.clone() };
        let (m, c) = estimate_curve(&p.table, &p.design, &p.geo, fit, &opts, bootstrap, level)?;
        models.get_or_insert(m);
        curves.push(c);
    }
    Ok((models.expect("one variant"), curves))
}

pub fn run(ctx: &Ctx, args: &RapArgs) -> Result<()> {
    let cfg: RapConfig = ctx.resolve("rap", args)?;
    let p = prepare(
        &cfg.input,
        &cfg.flows,
        &cfg.residential,
        &cfg.categorical,
        &cfg.continuous,
        cfg.standardize,
    )?;
    let fit = rap_options(cfg.density, cfg.race_factor, cfg.bandwidth, &cfg.r_domain)?;
    let base = CurveOptions {
        grid: grid_or_default(&cfg.grid, &p, &fit)?,
        r0: cfg.r0,
        variant: CurveVariant::Full,
        subsample_cap: cfg.subsample_cap,
        seed: cfg.seed,
    };
    let (models, curves) = fit_curves(&p, &fit, &base, &cfg.variants, cfg.bootstrap, cfg.level)?;
    let rows: Vec<Vec<String>> = curves.iter().flat_map(curve_rows).collect();
    let out = write(&ctx.path("rap.csv"), &CURVE_HEADER, &rows)?;
    write_meta(
        &ctx.out,
        "rap",
        cfg.seed,
        &cfg,
        &[out],
        json!({
            "grid": curves[0].r,
            "r_domain": [models.domain.0, models.domain.1],
            "rows_used": curves[0].rows_used,
            "subsampled": curves[0].subsampled,
        }),
    )
}

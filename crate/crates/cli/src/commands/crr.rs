use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use raceplace::crr::{estimate_crr, CrrOptions, CrrVariant, OutcomeForm, RaceScope, VariantCompositions};
use raceplace::report::{fmt_num, fmt_opt};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{invalid, write, Ctx, DataArgs};
use crate::inputs;
use crate::meta::write_meta;

#[derive(Args, Debug, Serialize)]
pub struct CrrArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Comma-separated variants: mobility, census, naive, blend:<alpha>.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<String>>,
    /// Outcome model: single or stratified.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    /// Race model scope: perprecinct or pooled.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub race_scope: Option<String>,
    /// Precincts with fewer stops are skipped.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_stops: Option<usize>,
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
pub struct CrrConfig {
    pub input: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub residential: Option<PathBuf>,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub standardize: bool,
    pub variants: Vec<String>,
    pub outcome: OutcomeForm,
    pub race_scope: RaceScope,
    pub min_stops: usize,
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for CrrConfig {
    fn default() -> Self {
        let o = CrrOptions::default();
        CrrConfig {
            input: None,
            flows: None,
            residential: None,
            categorical: Vec::new(),
            continuous: Vec::new(),
            standardize: false,
            variants: vec!["mobility".into(), "census".into(), "naive".into()],
            outcome: o.outcome,
            race_scope: o.race,
            min_stops: o.min_stops,
            bootstrap: 0,
            level: o.level,
            seed: 1,
        }
    }
}

fn parse_variant(s: &str) -> Result<CrrVariant> {
    Ok(match s {
        "mobility" => CrrVariant::Mobility,
        "census" => CrrVariant::Census,
        "naive" => CrrVariant::Naive,
        _ => match s.strip_prefix("blend:").and_then(|a| a.parse::<f64>().ok()) {
            Some(a) if (0.0..=1.0).contains(&a) => CrrVariant::Blend(a),
            _ => return Err(invalid("variants", format!("unknown variant {s:?}"))),
        },
    })
}

pub fn run(ctx: &Ctx, args: &CrrArgs) -> Result<()> {
    let cfg: CrrConfig = ctx.resolve("crr", args)?;
    let input = inputs::required("input", &cfg.input)?;
    let residential = inputs::required("residential", &cfg.residential)?;
    let variants: Vec<CrrVariant> = cfg.variants.iter().map(|v| parse_variant(v)).collect::<Result<_>>()?;
    if variants.is_empty() {
        return Err(invalid("variants", "at least one variant is needed"));
    }
    if cfg.flows.is_none() && variants.contains(&CrrVariant::Mobility) {
        return Err(invalid("flows", "the mobility variant needs a flow file"));
    }
    let schema = inputs::schema(&cfg.categorical, &cfg.continuous, cfg.standardize);
    let (table, _, design) = inputs::load_administrative(input, &schema)?;
    let mob = inputs::mobility(&table, cfg.flows.as_deref(), residential)?;
    let comps = variants
        .iter()
        .map(|&v| {
            let pi = match v {
                CrrVariant::Mobility => mob.pi.clone(),
                CrrVariant::Census => mob.p.clone(),
                CrrVariant::Blend(a) => mob.blended_composition(a)?,
                CrrVariant::Naive => Vec::new(),
            };
            Ok((v, pi))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = CrrOptions {
        outcome: cfg.outcome,
        race: cfg.race_scope,
        min_stops: cfg.min_stops,
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
        level: cfg.level,
    };
    let report = estimate_crr(&table, &design, &VariantCompositions(comps), &opts)?;
    if report.estimates.is_empty() {
        anyhow::bail!("no precinct could be estimated");
    }
    let rows: Vec<Vec<String>> = report
        .estimates
        .iter()
        .map(|e| {
            vec![
                e.precinct.to_string(),
                e.variant.to_string(),
                fmt_num(e.value),
                fmt_opt(e.ci.map(|c| c.0)),
                fmt_opt(e.ci.map(|c| c.1)),
            ]
        })
        .collect();
    let out = write(&ctx.path("crr.csv"), &["precinct", "variant", "estimate", "ci_lo", "ci_hi"], &rows)?;
    for (j, why) in &report.skipped {
        eprintln!("precinct {j} skipped: {why}");
    }
    let skipped: Vec<_> = report.skipped.iter().map(|(j, w)| json!({ "precinct": j, "reason": w })).collect();
    write_meta(
        &ctx.out,
        "crr",
        cfg.seed,
        &cfg,
        &[out],
        json!({ "skipped": skipped, "bootstrap_failures": report.bootstrap_failures }),
    )
}

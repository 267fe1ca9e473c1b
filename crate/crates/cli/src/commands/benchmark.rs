use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use raceplace::benchmark::{benchmark_report, BenchmarkInputs};
use raceplace::data::{encode, CovariateValues};
use raceplace::mobility::load_residential;
use raceplace::rap::DEFAULT_R0;
use raceplace::report::fmt_num;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{invalid, is_false, write, Ctx};
use crate::inputs;
use crate::meta::write_meta;

#[derive(Args, Debug, Serialize)]
pub struct BenchmarkArgs {
    /// Encounter CSV; R is taken from its `r` column, or from --residential by precinct.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Residential proportions CSV `precinct,p`, used when the table has no `r` column.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residential: Option<PathBuf>,
    /// Comma-separated categorical covariate columns.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categorical: Option<Vec<String>>,
    /// Comma-separated continuous covariate columns.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuous: Option<Vec<String>>,
    /// Standardize continuous covariates before fitting.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub standardize: bool,
    /// Covariates to benchmark (default: all).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    /// Comma-separated strength multipliers K for the formal benchmark.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<f64>>,
    /// Include the race factor in the informal benchmark.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub include_race: bool,
    /// Place value r at which ξ is evaluated.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Reference place value r0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    /// Extra column held fixed when measuring a covariate's strength: `u`
    /// or a continuous covariate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub input: Option<PathBuf>,
    pub residential: Option<PathBuf>,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub standardize: bool,
    pub covariates: Option<Vec<String>>,
    pub ks: Vec<f64>,
    pub include_race: bool,
    pub r: f64,
    pub r0: f64,
    pub reference: Option<String>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            input: None,
            residential: None,
            categorical: Vec::new(),
            continuous: Vec::new(),
            standardize: false,
            covariates: None,
            ks: vec![1.0],
            include_race: false,
            r: 0.2,
            r0: DEFAULT_R0,
            reference: None,
            seed: 1,
        }
    }
}

pub fn run(ctx: &Ctx, args: &BenchmarkArgs) -> Result<()> {
    let cfg: BenchmarkConfig = ctx.resolve("benchmark", args)?;
    let input = inputs::required("input", &cfg.input)?;
    let schema = inputs::schema(&cfg.categorical, &cfg.continuous, cfg.standardize);
    let (table, schema) = inputs::load_full(input, &schema)?;
    let design = encode(&table, &schema)?;
    let places: Vec<f64> = match (table.r(), &cfg.residential) {
        (Some(r), _) => r.to_vec(),
        (None, Some(path)) => {
            let p = load_residential(path)?;
            if p.len() < table.q() {
                bail!("{} covers {} precincts, the table has {}", path.display(), p.len(), table.q());
            }
            table.precinct().iter().map(|&j| p[j as usize]).collect()
        }
        (None, None) => return Err(invalid("residential", "needed when the table has no r column")),
    };
    let reference: Option<Vec<f64>> = match cfg.reference.as_deref() {
        None => None,
        Some("u") => Some(table.u().ok_or_else(|| invalid("reference", "the table has no u column"))?.to_vec()),
        Some(name) => match table.covariate(name).map(|c| &c.values) {
            Some(CovariateValues::Continuous(v)) => Some(v.clone()),
            _ => return Err(invalid("reference", format!("{name:?} is not a continuous column"))),
        },
    };
    let names: Vec<String> = match &cfg.covariates {
        Some(v) => v.clone(),
        None => schema.columns.iter().map(|c| c.name.clone()).collect(),
    };
    if names.is_empty() {
        return Err(invalid("covariates", "nothing to benchmark"));
    }
    let inputs = BenchmarkInputs {
        table: &table,
        design: &design,
        places: &places,
        r: cfg.r,
        r0: cfg.r0,
        reference: reference.as_deref(),
        seed: cfg.seed,
    };
    let mut rows = Vec::new();
    let mut partials = Vec::new();
    for name in &names {
        let rep = benchmark_report(&inputs, name, &cfg.ks, cfg.include_race)?;
        rows.push(vec![
            name.clone(),
            String::new(),
            String::new(),
            String::new(),
            fmt_num(rep.informal.mean),
            fmt_num(rep.informal.sd),
            String::new(),
            "informal".into(),
        ]);
        for f in &rep.formal {
            partials.push(json!({ "covariate": name, "K": f.k, "r2_y": f.benchmark.0, "r2_r": f.benchmark.1 }));
            for (k, c) in f.combos.iter().enumerate() {
                rows.push(vec![
                    name.clone(),
                    fmt_num(f.k),
                    fmt_num(c.sign_y),
                    fmt_num(c.sign_r),
                    fmt_num(c.xi.mean),
                    fmt_num(c.xi.sd),
                    (k == f.selected).to_string(),
                    "formal".into(),
                ]);
            }
        }
    }
    let header = ["covariate", "K", "sign_y", "sign_r", "mean_xi", "sd_xi", "selected", "kind"];
    let out = write(&ctx.path("benchmark.csv"), &header, &rows)?;
    write_meta(&ctx.out, "benchmark", cfg.seed, &cfg, &[out], json!({ "partial_r2": partials }))
}

use anyhow::Result;
use clap::Args;
use raceplace::crr::OutcomeForm;
use raceplace::rap::{default_grid, DEFAULT_R0};
use raceplace::report::fmt_num;
use raceplace::sim::{run_study, DgpSpec, MetricsReport, StudyEstimand, StudyOptions};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::simulate::dgp_kind;
use super::{invalid, write, Ctx};
use crate::meta::write_meta;

#[derive(Args, Debug, Serialize)]
pub struct StudyArgs {
    /// Scenario number (1 or 2); shorthand for --dgp scenarioN.
    #[arg(long)]
    #[serde(skip)]
    pub scenario: Option<u8>,
    /// Precinct process: scenario1, scenario2, monotone_decreasing, monotone_increasing.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp: Option<String>,
    /// Population rows per replicate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Precincts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    /// Replicates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    /// Covariate level at which estimates are scored.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<String>,
    /// Reference value r0 for Ψ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    /// Comma-separated grid of r for Ψ (r0 is left out of the scoring).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Comma-separated estimands: psi, crr.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimands: Option<Vec<String>>,
    /// CRR outcome model: single or stratified.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crr_outcome: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub dgp: String,
    pub n: usize,
    pub q: usize,
    pub reps: usize,
    pub x: String,
    pub r0: f64,
    pub grid: Vec<f64>,
    pub estimands: Vec<StudyEstimand>,
    pub crr_outcome: OutcomeForm,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            dgp: "scenario1".into(),
            n: 100_000,
            q: 35,
            reps: 100,
            x: "2".into(),
            r0: DEFAULT_R0,
            grid: default_grid(),
            estimands: vec![StudyEstimand::Psi, StudyEstimand::Crr],
            crr_outcome: OutcomeForm::Single,
            seed: 1,
        }
    }
}

fn summary_table(dgp: &str, reports: &[MetricsReport]) -> String {
    let mut s = format!(
        "{dgp}\n{:<10}{:>12}{:>10}{:>16}{:>14}\n",
        "estimand", "replicates", "failures", "percent_bias", "mse"
    );
    for m in reports {
        s.push_str(&format!(
            "{:<10}{:>12}{:>10}{:>16.4}{:>14.4e}\n",
            m.estimand.to_string(),
            m.replicates.len(),
            m.failures(),
            m.percent_bias,
            m.mse
        ));
    }
    s
}

pub fn run(ctx: &Ctx, args: &StudyArgs) -> Result<()> {
    let mut v = serde_json::to_value(args)?;
    if let Some(s) = args.scenario {
        if !(1..=2).contains(&s) {
            return Err(invalid("scenario", "must be 1 or 2"));
        }
        v["dgp"] = format!("scenario{s}").into();
    }
    let cfg: StudyConfig = ctx.resolve("study", &v)?;
    let kind = dgp_kind(&cfg.dgp, 0.0, None)?;
    if !kind.is_precinct_level() {
        return Err(invalid("dgp", format!("{} has no closed-form truth to score against", cfg.dgp)));
    }
    if cfg.estimands.is_empty() {
        return Err(invalid("estimands", "at least one estimand is needed"));
    }
    let spec = DgpSpec::new(kind, cfg.n, cfg.q, cfg.seed).map_err(|e| invalid("n", e.to_string()))?;
    let mut opts = StudyOptions {
        x: cfg.x.clone(),
        grid: cfg.grid.clone(),
        r0: cfg.r0,
        ..StudyOptions::default()
    };
    opts.crr.outcome = cfg.crr_outcome;
    if cfg.reps < 1 {
        return Err(invalid("reps", "must be at least 1"));
    }
    let reports = run_study(&spec, &cfg.estimands, &opts, cfg.reps)?;

    let mut header = vec!["replicate".to_string(), "seed".into()];
    for m in &reports {
        header.push(format!("{}_percent_bias", m.estimand));
        header.push(format!("{}_mse", m.estimand));
    }
    header.push("error".into());
    let rows: Vec<Vec<String>> = (0..cfg.reps)
        .map(|k| {
            let first = &reports[0].replicates[k];
            let mut row = vec![first.replicate.to_string(), first.seed.to_string()];
            for m in &reports {
                let rep = &m.replicates[k];
                row.push(fmt_num(rep.percent_bias(&m.truth)));
                row.push(fmt_num(rep.mse(&m.truth)));
            }
            row.push(first.error.clone().unwrap_or_default());
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut outputs = vec![write(&ctx.path("study_replicates.csv"), &header_refs, &rows)?];

    let summary: Vec<Vec<String>> = reports
        .iter()
        .map(|m| {
            vec![
                m.estimand.to_string(),
                m.replicates.len().to_string(),
                m.failures().to_string(),
                fmt_num(m.percent_bias),
                fmt_num(m.mse),
            ]
        })
        .collect();
    outputs.push(write(
        &ctx.path("study_summary.csv"),
        &["estimand", "replicates", "failures", "percent_bias", "mse"],
        &summary,
    )?);

    let points: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|m| {
            (0..m.points.len()).map(move |j| {
                vec![
                    m.estimand.to_string(),
                    fmt_num(m.points[j]),
                    fmt_num(m.truth[j]),
                    fmt_num(m.mean_estimate[j]),
                ]
            })
        })
        .collect();
    outputs.push(write(
        &ctx.path("study_points.csv"),
        &["estimand", "point", "truth", "mean_estimate"],
        &points,
    )?);

    let table = summary_table(&cfg.dgp, &reports);
    print!("{table}");
    std::fs::write(ctx.path("study_summary.txt"), &table)?;
    outputs.push("study_summary.txt".into());
    write_meta(&ctx.out, "study", cfg.seed, &cfg, &outputs, json!(null))
}

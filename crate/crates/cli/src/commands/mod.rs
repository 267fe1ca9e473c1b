//! One module per subcommand. Each has a clap argument struct whose set
//! flags override the JSON config, and a resolved config with defaults.

use std::path::{Path, PathBuf};

use anyhow::Result;
use raceplace::rap::CurveEstimate;
use raceplace::report::{fmt_num, write_csv};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config::{resolve, ConfigError};

pub mod benchmark;
pub mod bounds;
pub mod contour;
pub mod crr;
pub mod rap;
pub mod simulate;
pub mod study;
pub mod sweep;

pub struct Ctx {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Ctx {
    /// Config file, then subcommand flags, then the global seed.
    pub fn resolve<C: DeserializeOwned, A: Serialize>(&self, command: &str, args: &A) -> Result<C> {
        let mut v = serde_json::to_value(args)?;
        if let (Some(s), Value::Object(m)) = (self.seed, &mut v) {
            m.insert("seed".into(), s.into());
        }
        Ok(resolve(command, self.config.as_ref(), &v)?)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn invalid(path: &str, message: impl Into<String>) -> anyhow::Error {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
    .into()
}

pub fn is_false(b: &bool) -> bool {
    !*b
}

pub fn pair(field: &str, v: &Option<Vec<f64>>) -> Result<Option<(f64, f64)>> {
    match v.as_deref() {
        None => Ok(None),
        Some([a, b]) if a <= b => Ok(Some((*a, *b))),
        Some(_) => Err(invalid(field, "expected two ascending numbers")),
    }
}

pub const CURVE_HEADER: [&str; 6] = ["r", "estimate", "ci_lo", "ci_hi", "variant", "r0"];

pub fn curve_rows(c: &CurveEstimate) -> Vec<Vec<String>> {
    (0..c.r.len())
        .map(|k| {
            let (lo, hi) = match &c.ci {
                Some((lo, hi)) => (fmt_num(lo[k]), fmt_num(hi[k])),
                None => (String::new(), String::new()),
            };
            vec![
                fmt_num(c.r[k]),
                fmt_num(c.estimate[k]),
                lo,
                hi,
                c.variant.to_string(),
                fmt_num(c.r0),
            ]
        })
        .collect()
}

pub fn write(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    write_csv(path, header, rows)?;
    Ok(path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
}

/// Encounter table, geography and covariate schema flags shared by the
/// estimation commands.
#[derive(clap::Args, Debug, Serialize)]
pub struct DataArgs {
    /// Encounter CSV (`y,m,d,precinct,<covariates>`); unstopped rows are dropped.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Mobility flow CSV `origin,dest,value`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flows: Option<PathBuf>,
    /// Residential proportions CSV `precinct,p`.
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
}

//! Loading encounter tables and geography from the paths in a config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use raceplace::data::{encode, load_encounters, CovariateSchema, DesignMatrix, EncounterTable, TableMode};
use raceplace::mobility::{load_flows, load_residential, MobilityModel};
use raceplace::rap::Geography;

use crate::config::ConfigError;

pub fn required<'a>(field: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
    match v {
        Some(p) => Ok(p),
        None => Err(ConfigError {
            path: field.into(),
            message: "required".into(),
        }
        .into()),
    }
}

pub fn schema(categorical: &[String], continuous: &[String], standardize: bool) -> CovariateSchema {
    let mut s = CovariateSchema::new();
    for c in categorical {
        s = s.categorical(c);
    }
    for c in continuous {
        s = s.continuous(c);
    }
    s.standardize = standardize;
    s
}

/// Read a table in full mode (unstopped rows allowed); `resolve` fills in
/// categorical levels.
pub fn load_full(path: &Path, schema: &CovariateSchema) -> Result<(EncounterTable, CovariateSchema)> {
    let table = load_encounters(path, schema, TableMode::Full).with_context(|| format!("loading {}", path.display()))?;
    let schema = schema.resolve(&table)?;
    Ok((table, schema))
}

/// Stopped rows without the confounder, with their design matrix.
pub fn load_administrative(path: &Path, schema: &CovariateSchema) -> Result<(EncounterTable, CovariateSchema, DesignMatrix)> {
    let (full, schema) = load_full(path, schema)?;
    let table = full.administrative();
    if table.n() == 0 {
        bail!("{} has no stopped rows", path.display());
    }
    let design = encode(&table, &schema)?;
    Ok((table, schema, design))
}

/// Mobility from flows and residential shares. Without flows the
/// compositions are residential (T = I) and the time weights are the
/// per-precinct row counts of `table`.
pub fn mobility(table: &EncounterTable, flows: Option<&Path>, residential: &Path) -> Result<MobilityModel> {
    let p = load_residential(residential).with_context(|| format!("loading {}", residential.display()))?;
    if p.len() != table.q() {
        bail!(
            "{} lists {} precincts but the encounter table has {}",
            residential.display(),
            p.len(),
            table.q()
        );
    }
    let model = match flows {
        Some(f) => {
            let counts = load_flows(f, Some(p.len())).with_context(|| format!("loading {}", f.display()))?;
            MobilityModel::from_flows(&counts, &p)?
        }
        None => {
            let weights: Vec<f64> = table.rows_by_precinct().iter().map(|r| r.len() as f64).collect();
            MobilityModel::census(&p, &weights)?
        }
    };
    Ok(model)
}

pub fn geography(table: &EncounterTable, flows: Option<&Path>, residential: &Path) -> Result<Geography> {
    Ok(Geography::from_mobility(&mobility(table, flows, residential)?)?)
}

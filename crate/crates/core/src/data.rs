//! Encounter tables, covariate schemas and design matrices.
//!
//! A table holds one row per encounter: force used (`y`), stopped (`m`), race
//! (`d`, 1 = Black), precinct id and covariates. Real administrative data has
//! `m = 1` everywhere; simulated full-population tables also carry unstopped
//! rows and, optionally, the confounder `u` and a per-row place value `r`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableMode {
    Administrative,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    /// An empty level list is filled from the data by [`CovariateSchema::resolve`].
    Categorical {
        #[serde(default)]
        levels: Vec<String>,
    },
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Column names, kinds and the encoding order of the covariates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub columns: Vec<CovariateSpec>,
    #[serde(default)]
    pub standardize: bool,
}

impl CovariateSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn categorical(mut self, name: &str) -> Self {
        self.columns.push(CovariateSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical { levels: Vec::new() },
        });
        self
    }

    pub fn categorical_with_levels(mut self, name: &str, levels: &[&str]) -> Self {
        let mut levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
        sort_levels(&mut levels);
        self.columns.push(CovariateSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical { levels },
        });
        self
    }

    pub fn continuous(mut self, name: &str) -> Self {
        self.columns.push(CovariateSpec {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
        });
        self
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Fill empty categorical level lists with the sorted levels seen in `table`.
    pub fn resolve(&self, table: &EncounterTable) -> Result<CovariateSchema> {
        let mut out = self.clone();
        for spec in &mut out.columns {
            if let ColumnKind::Categorical { levels } = &mut spec.kind {
                let cov = table.covariate(&spec.name).ok_or_else(|| Error::MissingColumn(spec.name.clone()))?;
                if levels.is_empty() {
                    match &cov.values {
                        CovariateValues::Categorical { levels: seen, .. } => {
                            *levels = seen.clone();
                            sort_levels(levels);
                        }
                        CovariateValues::Continuous(_) => {
                            return Err(Error::BadValue {
                                row: 0,
                                column: spec.name.clone(),
                                value: "continuous column declared categorical".into(),
                            })
                        }
                    }
                } else {
                    sort_levels(levels);
                }
            }
        }
        Ok(out)
    }

    /// Schema with the named covariate removed.
    pub fn without(&self, name: &str) -> CovariateSchema {
        CovariateSchema {
            columns: self.columns.iter().filter(|c| c.name != name).cloned().collect(),
            standardize: self.standardize,
        }
    }
}

/// Numeric order when every level parses as a number, lexicographic otherwise.
pub fn sort_levels(levels: &mut Vec<String>) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => levels.sort_by(|a, b| {
            let (x, y) = (a.trim().parse::<f64>().unwrap(), b.trim().parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        }),
        None => levels.sort(),
    }
    levels.dedup();
}

#[derive(Clone, Debug, PartialEq)]
pub enum CovariateValues {
    /// `codes[i]` indexes into `levels`.
    Categorical {
        levels: Vec<String>,
        codes: Vec<u32>,
    },
    Continuous(Vec<f64>),
}

impl CovariateValues {
    fn len(&self) -> usize {
        match self {
            CovariateValues::Categorical { codes, .. } => codes.len(),
            CovariateValues::Continuous(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> CovariateValues {
        match self {
            CovariateValues::Categorical { levels, codes } => CovariateValues::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
            CovariateValues::Continuous(v) => CovariateValues::Continuous(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Text form of row `i`, as written to CSV.
    pub fn display(&self, i: usize) -> String {
        match self {
            CovariateValues::Categorical { levels, codes } => levels[codes[i] as usize].clone(),
            CovariateValues::Continuous(v) => format!("{}", v[i]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
}

impl Covariate {
    /// Categorical covariate from per-row labels; levels are the sorted distinct labels.
    pub fn categorical_from_labels(name: &str, labels: &[String]) -> Covariate {
        let mut levels: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        sort_levels(&mut levels);
        let index: HashMap<&str, u32> = levels.iter().enumerate().map(|(k, l)| (l.as_str(), k as u32)).collect();
        let codes = labels.iter().map(|l| index[l.as_str()]).collect();
        Covariate {
            name: name.to_string(),
            values: CovariateValues::Categorical { levels, codes },
        }
    }

    pub fn continuous(name: &str, values: Vec<f64>) -> Covariate {
        Covariate {
            name: name.to_string(),
            values: CovariateValues::Continuous(values),
        }
    }
}

/// Raw columns for [`EncounterTable::new`].
#[derive(Clone, Debug, Default)]
pub struct TableParts {
    pub y: Vec<u8>,
    pub m: Vec<u8>,
    pub d: Vec<u8>,
    pub precinct: Vec<u32>,
    pub covariates: Vec<Covariate>,
    pub u: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    /// Precinct count; inferred as max id + 1 when absent.
    pub q: Option<usize>,
}

/// A validated encounter table. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EncounterTable {
    y: Vec<u8>,
    m: Vec<u8>,
    d: Vec<u8>,
    precinct: Vec<u32>,
    covariates: Vec<Covariate>,
    u: Option<Vec<f64>>,
    r: Option<Vec<f64>>,
    q: usize,
    mode: TableMode,
}

impl EncounterTable {
    pub fn new(parts: TableParts, mode: TableMode) -> Result<Self> {
        let n = parts.y.len();
        for len in [parts.m.len(), parts.d.len(), parts.precinct.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        for cov in &parts.covariates {
            if cov.values.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: cov.values.len(),
                });
            }
        }
        for opt in [&parts.u, &parts.r].into_iter().flatten() {
            if opt.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: opt.len(),
                });
            }
        }
        for i in 0..n {
            for (name, col) in [("y", &parts.y), ("m", &parts.m), ("d", &parts.d)] {
                if col[i] > 1 {
                    return Err(Error::NonBinaryField {
                        row: i,
                        column: name.into(),
                    });
                }
            }
            if parts.y[i] == 1 && parts.m[i] == 0 {
                return Err(Error::MandatoryReportingViolation { row: i });
            }
            if mode == TableMode::Administrative && parts.m[i] == 0 {
                return Err(Error::NotAdministrative { row: i });
            }
        }
        let max_id = parts.precinct.iter().copied().max().map(|v| v as usize + 1).unwrap_or(0);
        let q = parts.q.unwrap_or(max_id);
        if let Some(i) = parts.precinct.iter().position(|&p| p as usize >= q) {
            return Err(Error::BadValue {
                row: i,
                column: "precinct".into(),
                value: parts.precinct[i].to_string(),
            });
        }
        for cov in &parts.covariates {
            match &cov.values {
                CovariateValues::Categorical { levels, codes } => {
                    if let Some(i) = codes.iter().position(|&c| c as usize >= levels.len()) {
                        return Err(Error::BadValue {
                            row: i,
                            column: cov.name.clone(),
                            value: codes[i].to_string(),
                        });
                    }
                }
                CovariateValues::Continuous(v) => check_finite(v, &cov.name)?,
            }
        }
        if let Some(u) = &parts.u {
            check_finite(u, "u")?;
        }
        if let Some(r) = &parts.r {
            check_finite(r, "r")?;
        }
        Ok(EncounterTable {
            y: parts.y,
            m: parts.m,
            d: parts.d,
            precinct: parts.precinct,
            covariates: parts.covariates,
            u: parts.u,
            r: parts.r,
            q,
            mode,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn mode(&self) -> TableMode {
        self.mode
    }
    pub fn y(&self) -> &[u8] {
        &self.y
    }
    pub fn m(&self) -> &[u8] {
        &self.m
    }
    pub fn d(&self) -> &[u8] {
        &self.d
    }
    pub fn precinct(&self) -> &[u32] {
        &self.precinct
    }
    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }
    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }
    pub fn u(&self) -> Option<&[f64]> {
        self.u.as_deref()
    }
    /// Per-row place value, when the table defines R row by row.
    pub fn r(&self) -> Option<&[f64]> {
        self.r.as_deref()
    }

    /// Rows in the given order (repeats allowed, as in a bootstrap resample).
    pub fn select(&self, rows: &[usize]) -> EncounterTable {
        let pick8 = |v: &Vec<u8>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pickf = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        EncounterTable {
            y: pick8(&self.y),
            m: pick8(&self.m),
            d: pick8(&self.d),
            precinct: rows.iter().map(|&i| self.precinct[i]).collect(),
            covariates: self
                .covariates
                .iter()
                .map(|c| Covariate {
                    name: c.name.clone(),
                    values: c.values.select(rows),
                })
                .collect(),
            u: self.u.as_ref().map(pickf),
            r: self.r.as_ref().map(pickf),
            q: self.q,
            mode: self.mode,
        }
    }

    /// The administrative view: stopped rows only, confounder dropped.
    pub fn administrative(&self) -> EncounterTable {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| self.m[i] == 1).collect();
        let mut t = self.select(&rows);
        t.u = None;
        t.mode = TableMode::Administrative;
        t
    }

    /// Same rows with the confounder column removed.
    pub fn without_confounder(&self) -> EncounterTable {
        let mut t = self.clone();
        t.u = None;
        t
    }

    /// Row indices grouped by precinct id.
    pub fn rows_by_precinct(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.q];
        for (i, &p) in self.precinct.iter().enumerate() {
            out[p as usize].push(i);
        }
        out
    }
}

fn check_finite(v: &[f64], name: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::BadValue {
            row: i,
            column: name.into(),
            value: v[i].to_string(),
        });
    }
    Ok(())
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => {
            if other.parse::<f64>().is_ok() {
                Err(Error::NonBinaryField {
                    row,
                    column: column.into(),
                })
            } else {
                Err(Error::BadValue {
                    row,
                    column: column.into(),
                    value: other.into(),
                })
            }
        }
    }
}

fn parse_f64(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::BadValue {
            row,
            column: column.into(),
            value: raw.into(),
        })
}

/// Read an encounter CSV. Columns `y,m,d,precinct` and every schema covariate
/// are required; `u` and `r` are read when present. Row numbers in errors are
/// zero-based data rows.
pub fn load_encounters(path: &Path, schema: &CovariateSchema, mode: TableMode) -> Result<EncounterTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (iy, im, id, ip) = (need("y")?, need("m")?, need("d")?, need("precinct")?);
    let cov_idx: Vec<usize> = schema.columns.iter().map(|c| need(&c.name)).collect::<Result<_>>()?;
    let iu = col("u");
    let ir = col("r");

    let mut parts = TableParts::default();
    let mut u = Vec::new();
    let mut r = Vec::new();
    let mut cat_raw: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
    let mut cont: Vec<Vec<f64>> = vec![Vec::new(); schema.columns.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        parts.y.push(parse_binary(field(iy), row, "y")?);
        parts.m.push(parse_binary(field(im), row, "m")?);
        parts.d.push(parse_binary(field(id), row, "d")?);
        let p = field(ip);
        parts.precinct.push(p.parse::<u32>().map_err(|_| Error::BadValue {
            row,
            column: "precinct".into(),
            value: p.into(),
        })?);
        for (k, spec) in schema.columns.iter().enumerate() {
            let raw = field(cov_idx[k]);
            match spec.kind {
                ColumnKind::Categorical { .. } => {
                    if raw.is_empty() {
                        return Err(Error::BadValue {
                            row,
                            column: spec.name.clone(),
                            value: String::new(),
                        });
                    }
                    cat_raw[k].push(raw.to_string())
                }
                ColumnKind::Continuous => cont[k].push(parse_f64(raw, row, &spec.name)?),
            }
        }
        if let Some(k) = iu {
            u.push(parse_f64(field(k), row, "u")?);
        }
        if let Some(k) = ir {
            r.push(parse_f64(field(k), row, "r")?);
        }
    }
    for (k, spec) in schema.columns.iter().enumerate() {
        parts.covariates.push(match spec.kind {
            ColumnKind::Categorical { .. } => Covariate::categorical_from_labels(&spec.name, &cat_raw[k]),
            ColumnKind::Continuous => Covariate::continuous(&spec.name, std::mem::take(&mut cont[k])),
        });
    }
    parts.u = iu.map(|_| u);
    parts.r = ir.map(|_| r);
    EncounterTable::new(parts, mode)
}

/// Write a table as CSV: `y,m,d,precinct[,r],<covariates>[,u]`. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_encounters(table: &EncounterTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let mut header = vec!["y".to_string(), "m".into(), "d".into(), "precinct".into()];
    if table.r.is_some() {
        header.push("r".into());
    }
    header.extend(table.covariates.iter().map(|c| c.name.clone()));
    if table.u.is_some() {
        header.push("u".into());
    }
    w.write_record(&header)?;
    for i in 0..table.n() {
        let mut rec = vec![
            table.y[i].to_string(),
            table.m[i].to_string(),
            table.d[i].to_string(),
            table.precinct[i].to_string(),
        ];
        if let Some(r) = &table.r {
            rec.push(format!("{}", r[i]));
        }
        rec.extend(table.covariates.iter().map(|c| c.values.display(i)));
        if let Some(u) = &table.u {
            rec.push(format!("{}", u[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub mean: f64,
    pub sd: f64,
}

/// Maps a categorical level to its indicator column.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelColumn {
    pub covariate: String,
    pub level: String,
    pub column: usize,
}

/// Row-major numeric design with a leading intercept column.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
    labels: Vec<String>,
    scaling: Vec<Option<Scaling>>,
    levels: Vec<LevelColumn>,
    /// Encoded column ranges per covariate name.
    groups: Vec<(String, std::ops::Range<usize>)>,
}

impl DesignMatrix {
    /// Plain matrix from row-major data. No intercept is added.
    pub fn from_row_major(nrows: usize, labels: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let ncols = labels.len();
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch {
                expected: nrows * ncols,
                found: data.len(),
            });
        }
        Ok(DesignMatrix {
            nrows,
            ncols,
            data,
            scaling: vec![None; ncols],
            groups: labels.iter().enumerate().map(|(j, l)| (l.clone(), j..j + 1)).collect(),
            labels,
            levels: Vec::new(),
        })
    }

    /// Intercept followed by the given columns.
    pub fn with_intercept(columns: &[(&str, &[f64])]) -> Result<Self> {
        let n = columns.first().map(|c| c.1.len()).unwrap_or(0);
        let ones = vec![1.0; n];
        let mut all: Vec<(&str, &[f64])> = vec![("(intercept)", &ones)];
        all.extend_from_slice(columns);
        Self::from_columns(&all)
    }

    pub fn from_columns(columns: &[(&str, &[f64])]) -> Result<Self> {
        let n = columns.first().map(|c| c.1.len()).unwrap_or(0);
        for c in columns {
            if c.1.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: c.1.len(),
                });
            }
        }
        let p = columns.len();
        let mut data = vec![0.0; n * p];
        for (j, c) in columns.iter().enumerate() {
            for i in 0..n {
                data[i * p + j] = c.1[i];
            }
        }
        Self::from_row_major(n, columns.iter().map(|c| c.0.to_string()).collect(), data)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn scaling(&self) -> &[Option<Scaling>] {
        &self.scaling
    }
    pub fn level_columns(&self) -> &[LevelColumn] {
        &self.levels
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.data[i * self.ncols + j]).collect()
    }

    /// Encoded column range of a covariate.
    pub fn covariate_columns(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.groups.iter().find(|g| g.0 == name).map(|g| g.1.clone())
    }

    /// Covariate part of row `i` (everything after the intercept).
    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.row(i)[1..]
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            nrows: rows.len(),
            data,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> DesignMatrix {
        DesignMatrix {
            nrows: 0,
            ncols: self.ncols,
            data: Vec::new(),
            labels: self.labels.clone(),
            scaling: self.scaling.clone(),
            levels: self.levels.clone(),
            groups: self.groups.clone(),
        }
    }

    /// Insert named columns starting at position `at`.
    pub fn insert_columns(&self, at: usize, cols: &[(&str, &[f64])]) -> Result<DesignMatrix> {
        assert!(at <= self.ncols);
        for c in cols {
            if c.1.len() != self.nrows {
                return Err(Error::DimensionMismatch {
                    expected: self.nrows,
                    found: c.1.len(),
                });
            }
        }
        let k = cols.len();
        let p = self.ncols + k;
        let mut data = Vec::with_capacity(self.nrows * p);
        for i in 0..self.nrows {
            let row = self.row(i);
            data.extend_from_slice(&row[..at]);
            data.extend(cols.iter().map(|c| c.1[i]));
            data.extend_from_slice(&row[at..]);
        }
        let shift = |j: usize| if j >= at { j + k } else { j };
        let mut labels = self.labels[..at].to_vec();
        labels.extend(cols.iter().map(|c| c.0.to_string()));
        labels.extend_from_slice(&self.labels[at..]);
        let mut scaling = self.scaling[..at].to_vec();
        scaling.extend(std::iter::repeat_n(None, k));
        scaling.extend_from_slice(&self.scaling[at..]);
        let mut groups: Vec<(String, std::ops::Range<usize>)> = self
            .groups
            .iter()
            .map(|(n, r)| (n.clone(), shift(r.start)..shift(r.start) + r.len()))
            .collect();
        groups.extend(cols.iter().enumerate().map(|(o, c)| (c.0.to_string(), at + o..at + o + 1)));
        Ok(DesignMatrix {
            nrows: self.nrows,
            ncols: p,
            data,
            labels,
            scaling,
            levels: self
                .levels
                .iter()
                .map(|l| LevelColumn {
                    column: shift(l.column),
                    ..l.clone()
                })
                .collect(),
            groups,
        })
    }

    pub fn append_columns(&self, cols: &[(&str, &[f64])]) -> Result<DesignMatrix> {
        self.insert_columns(self.ncols, cols)
    }

    /// Same matrix without the listed columns.
    pub fn drop_columns(&self, drop: &[usize]) -> DesignMatrix {
        let keep: Vec<usize> = (0..self.ncols).filter(|j| !drop.contains(j)).collect();
        let mut data = Vec::with_capacity(self.nrows * keep.len());
        for i in 0..self.nrows {
            let row = self.row(i);
            data.extend(keep.iter().map(|&j| row[j]));
        }
        let new_index = |j: usize| keep.iter().position(|&k| k == j);
        DesignMatrix {
            nrows: self.nrows,
            ncols: keep.len(),
            data,
            labels: keep.iter().map(|&j| self.labels[j].clone()).collect(),
            scaling: keep.iter().map(|&j| self.scaling[j].clone()).collect(),
            levels: self
                .levels
                .iter()
                .filter_map(|l| new_index(l.column).map(|c| LevelColumn { column: c, ..l.clone() }))
                .collect(),
            groups: self
                .groups
                .iter()
                .filter_map(|(n, r)| {
                    let cols: Vec<usize> = r.clone().filter_map(new_index).collect();
                    (!cols.is_empty()).then(|| (n.clone(), cols[0]..cols[0] + cols.len()))
                })
                .collect(),
        }
    }
}

/// One-hot and continuous encoding with a leading intercept. Categorical
/// columns drop their first (reference) level.
pub fn encode(table: &EncounterTable, schema: &CovariateSchema) -> Result<DesignMatrix> {
    let schema = schema.resolve(table)?;
    let n = table.n();
    let mut labels = vec!["(intercept)".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut scaling = vec![None];
    let mut levels_out = Vec::new();
    let mut groups = Vec::new();
    for spec in &schema.columns {
        let cov = table.covariate(&spec.name).ok_or_else(|| Error::MissingColumn(spec.name.clone()))?;
        let start = cols.len();
        match (&spec.kind, &cov.values) {
            (ColumnKind::Categorical { levels }, CovariateValues::Categorical { levels: seen, codes }) => {
                let mut map = Vec::with_capacity(seen.len());
                for s in seen {
                    match levels.iter().position(|l| l == s) {
                        Some(k) => map.push(k),
                        None => {
                            return Err(Error::UnknownLevel {
                                column: spec.name.clone(),
                                value: s.clone(),
                            })
                        }
                    }
                }
                for (k, level) in levels.iter().enumerate().skip(1) {
                    let col: Vec<f64> = codes.iter().map(|&c| (map[c as usize] == k) as u8 as f64).collect();
                    levels_out.push(LevelColumn {
                        covariate: spec.name.clone(),
                        level: level.clone(),
                        column: cols.len(),
                    });
                    labels.push(format!("{}={}", spec.name, level));
                    cols.push(col);
                    scaling.push(None);
                }
            }
            (ColumnKind::Continuous, CovariateValues::Continuous(v)) => {
                let mut col = v.clone();
                let mut sc = None;
                if schema.standardize && n > 1 {
                    let mean = col.iter().sum::<f64>() / n as f64;
                    let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
                    if sd > 0.0 {
                        col.iter_mut().for_each(|x| *x = (*x - mean) / sd);
                        sc = Some(Scaling { mean, sd });
                    }
                }
                labels.push(spec.name.clone());
                cols.push(col);
                scaling.push(sc);
            }
            _ => {
                return Err(Error::BadValue {
                    row: 0,
                    column: spec.name.clone(),
                    value: "covariate kind does not match the schema".into(),
                })
            }
        }
        groups.push((spec.name.clone(), start..cols.len()));
    }
    let refs: Vec<(&str, &[f64])> = labels.iter().map(|s| s.as_str()).zip(cols.iter().map(|c| c.as_slice())).collect();
    let mut dm = DesignMatrix::from_columns(&refs)?;
    dm.scaling = scaling;
    dm.levels = levels_out;
    dm.groups = groups;
    Ok(dm)
}

/// Covariate part of a design row (no intercept) for the given values, e.g.
/// `[("x", "2")]`. Every covariate in the schema must be given; `schema` is
/// the resolved schema the design was encoded with.
pub fn encode_pattern(schema: &CovariateSchema, design: &DesignMatrix, values: &[(&str, &str)]) -> Result<Vec<f64>> {
    let mut row = vec![0.0; design.ncols() - 1];
    for spec in &schema.columns {
        let raw = values
            .iter()
            .find(|v| v.0 == spec.name)
            .map(|v| v.1)
            .ok_or_else(|| Error::MissingColumn(spec.name.clone()))?;
        let cols = design
            .covariate_columns(&spec.name)
            .ok_or_else(|| Error::MissingColumn(spec.name.clone()))?;
        match &spec.kind {
            ColumnKind::Categorical { levels } => {
                let k = levels.iter().position(|l| l == raw).ok_or_else(|| Error::UnknownLevel {
                    column: spec.name.clone(),
                    value: raw.into(),
                })?;
                if k > 0 {
                    row[cols.start + k - 2] = 1.0;
                }
            }
            ColumnKind::Continuous => {
                let v: f64 = raw.parse().map_err(|_| Error::BadValue {
                    row: 0,
                    column: spec.name.clone(),
                    value: raw.into(),
                })?;
                row[cols.start - 1] = match &design.scaling()[cols.start] {
                    Some(s) => (v - s.mean) / s.sd,
                    None => v,
                };
            }
        }
    }
    Ok(row)
}

/// Distinct covariate rows (columns after the intercept) among `rows`, in
/// first-seen order, with their multiplicities.
pub fn collapse_patterns(design: &DesignMatrix, rows: &[usize]) -> Vec<(Vec<f64>, usize)> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<(Vec<f64>, usize)> = Vec::new();
    for &i in rows {
        let x = design.covariate_row(i);
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&k) => out[k].1 += 1,
            None => {
                index.insert(key, out.len());
                out.push((x.to_vec(), 1));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecinctSummary {
    pub precinct: usize,
    pub count: usize,
    pub black: usize,
    /// Fraction of rows with d = 1; `None` for an empty precinct.
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    EmptyPrecinct(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecinctSummaries {
    pub rows: Vec<PrecinctSummary>,
    pub warnings: Vec<Warning>,
}

impl PrecinctSummaries {
    /// Empirical r_j with empty precincts set to `fill`.
    pub fn shares(&self, fill: f64) -> Vec<f64> {
        self.rows.iter().map(|s| s.r.unwrap_or(fill)).collect()
    }
    pub fn counts(&self) -> Vec<f64> {
        self.rows.iter().map(|s| s.count as f64).collect()
    }
}

pub fn precinct_summary(table: &EncounterTable) -> Result<PrecinctSummaries> {
    if table.n() == 0 {
        return Err(Error::EmptyTable);
    }
    let mut count = vec![0usize; table.q()];
    let mut black = vec![0usize; table.q()];
    for i in 0..table.n() {
        let p = table.precinct[i] as usize;
        count[p] += 1;
        black[p] += table.d[i] as usize;
    }
    let mut warnings = Vec::new();
    let rows = (0..table.q())
        .map(|j| {
            if count[j] == 0 {
                warnings.push(Warning::EmptyPrecinct(j));
            }
            PrecinctSummary {
                precinct: j,
                count: count[j],
                black: black[j],
                r: (count[j] > 0).then(|| black[j] as f64 / count[j] as f64),
            }
        })
        .collect();
    Ok(PrecinctSummaries { rows, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncounterTable {
        EncounterTable::new(
            TableParts {
                y: vec![0, 1, 0],
                m: vec![1, 1, 1],
                d: vec![1, 0, 1],
                precinct: vec![0, 0, 1],
                covariates: vec![Covariate::categorical_from_labels("x", &["2".into(), "1".into(), "10".into()])],
                ..Default::default()
            },
            TableMode::Administrative,
        )
        .unwrap()
    }

    #[test]
    fn numeric_levels_sort_numerically() {
        let mut l = vec!["10".to_string(), "2".into(), "1".into()];
        sort_levels(&mut l);
        assert_eq!(l, vec!["1", "2", "10"]);
    }

    #[test]
    fn encode_drops_reference_level() {
        let t = tiny();
        let dm = encode(&t, &CovariateSchema::new().categorical("x")).unwrap();
        assert_eq!(dm.labels(), &["(intercept)", "x=2", "x=10"]);
        assert_eq!(dm.row(0), &[1.0, 1.0, 0.0]);
        assert_eq!(dm.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(dm.row(2), &[1.0, 0.0, 1.0]);
        assert_eq!(dm.covariate_columns("x"), Some(1..3));
    }

    #[test]
    fn unknown_level_rejected() {
        let t = tiny();
        let schema = CovariateSchema::new().categorical_with_levels("x", &["1", "2"]);
        assert!(matches!(encode(&t, &schema), Err(Error::UnknownLevel { .. })));
    }

    #[test]
    fn insert_and_drop_columns_keep_groups() {
        let t = tiny();
        let dm = encode(&t, &CovariateSchema::new().categorical("x")).unwrap();
        let r = [0.1, 0.2, 0.3];
        let dr = dm.insert_columns(1, &[("r", &r)]).unwrap();
        assert_eq!(dr.labels()[1], "r");
        assert_eq!(dr.covariate_columns("x"), Some(2..4));
        assert_eq!(dr.row(2), &[1.0, 0.3, 0.0, 1.0]);
        let back = dr.drop_columns(&[1]);
        assert_eq!(back.data(), dm.data());
        assert_eq!(back.covariate_columns("x"), Some(1..3));
    }

    #[test]
    fn summary_shares() {
        let s = precinct_summary(&tiny()).unwrap();
        assert_eq!(s.rows[0].r, Some(0.5));
        assert_eq!(s.rows[1].r, Some(1.0));
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn collapse_counts_patterns() {
        let t = tiny();
        let dm = encode(&t, &CovariateSchema::new().categorical("x")).unwrap();
        let p = collapse_patterns(&dm, &[0, 1, 2, 0]);
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].1, 2);
    }
}

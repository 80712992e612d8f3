//! Columnar numeric datasets: CSV ingestion, derived columns, and grouped
//! descriptive statistics.
//!
//! Columns are float64 throughout; binary and categorical columns store
//! their codes as small non-negative integers inside the numeric vector.
//! Rows containing unparseable or empty cells are dropped at ingestion and
//! counted, never silently discarded.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared role of a column in a load schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Binary,
    Categorical,
    Continuous,
}

/// Validated per-column metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ColumnMeta {
    /// Values constrained to {0, 1}.
    Binary,
    /// Integer level codes 0..levels-1.
    Categorical { levels: usize },
    Continuous,
}

impl fmt::Display for ColumnMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnMeta::Binary => write!(f, "binary"),
            ColumnMeta::Categorical { levels } => write!(f, "categorical({levels})"),
            ColumnMeta::Continuous => write!(f, "continuous"),
        }
    }
}

/// Ordered load schema: column name -> declared role.
pub type Schema = Vec<(String, ColumnRole)>;

/// Immutable columnar table of named numeric columns.
///
/// Safe to share across threads once constructed; every transform returns a
/// new `Dataset`.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    meta: Vec<ColumnMeta>,
    index: HashMap<String, usize>,
    n_rows: usize,
    dropped_rows: usize,
}

impl Dataset {
    /// Build a dataset from `(name, meta, values)` triples, validating the
    /// column invariants.
    pub fn from_columns(cols: Vec<(String, ColumnMeta, Vec<f64>)>) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::InvalidSpec("dataset needs at least one column".into()));
        }
        let n_rows = cols[0].2.len();
        if n_rows == 0 {
            return Err(Error::EmptyAfterCleaning { dropped: 0 });
        }
        let mut ds = Dataset {
            names: Vec::new(),
            columns: Vec::new(),
            meta: Vec::new(),
            index: HashMap::new(),
            n_rows,
            dropped_rows: 0,
        };
        for (name, meta, values) in cols {
            ds.push_column(name, meta, values)?;
        }
        Ok(ds)
    }

    fn push_column(&mut self, name: String, meta: ColumnMeta, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows {
            return Err(Error::InvalidSpec(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::InvalidSpec(format!("duplicate column `{name}`")));
        }
        validate_column(&name, meta, &values)?;
        self.index.insert(name.clone(), self.columns.len());
        self.names.push(name);
        self.columns.push(values);
        self.meta.push(meta);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Rows dropped during ingestion because of missing or unparseable cells.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.index
            .get(name)
            .map(|&i| self.columns[i].as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn meta(&self, name: &str) -> Result<ColumnMeta> {
        self.index
            .get(name)
            .map(|&i| self.meta[i])
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Number of levels of a binary or categorical column.
    pub fn levels(&self, name: &str) -> Result<usize> {
        match self.meta(name)? {
            ColumnMeta::Binary => Ok(2),
            ColumnMeta::Categorical { levels } => Ok(levels),
            ColumnMeta::Continuous => Err(Error::Domain {
                column: name.to_string(),
                detail: "continuous column has no levels".into(),
            }),
        }
    }

    /// Append a column, returning a new dataset.
    pub fn with_column(&self, name: &str, meta: ColumnMeta, values: Vec<f64>) -> Result<Self> {
        let mut next = self.clone();
        next.push_column(name.to_string(), meta, values)?;
        Ok(next)
    }

    /// Replace the values of an existing column, returning a new dataset.
    pub fn replace_column(&self, name: &str, meta: ColumnMeta, values: Vec<f64>) -> Result<Self> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        if values.len() != self.n_rows {
            return Err(Error::InvalidSpec(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        validate_column(name, meta, &values)?;
        let mut next = self.clone();
        next.columns[idx] = values;
        next.meta[idx] = meta;
        Ok(next)
    }

    /// Keep only the rows where `keep` is true. Column metadata is
    /// preserved, so categorical level counts keep their declared width.
    pub fn filter_rows(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.n_rows {
            return Err(Error::InvalidSpec(format!(
                "mask has {} entries, dataset has {} rows",
                keep.len(),
                self.n_rows
            )));
        }
        let kept = keep.iter().filter(|&&k| k).count();
        if kept == 0 {
            return Err(Error::EmptyAfterCleaning { dropped: self.n_rows });
        }
        let mut out = self.clone();
        out.n_rows = kept;
        for col in &mut out.columns {
            let mut filtered = Vec::with_capacity(kept);
            for (v, &k) in col.iter().zip(keep) {
                if k {
                    filtered.push(*v);
                }
            }
            *col = filtered;
        }
        Ok(out)
    }

    /// Write all columns as RFC 4180 CSV with a header row. Floats are
    /// printed with Rust's shortest round-trip formatting, so reloading
    /// reproduces the column vectors bit for bit.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(self.names.iter())?;
        let mut record: Vec<String> = Vec::with_capacity(self.names.len());
        for row in 0..self.n_rows {
            record.clear();
            for col in &self.columns {
                record.push(format!("{}", col[row]));
            }
            wtr.write_record(record.iter())?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn validate_column(name: &str, meta: ColumnMeta, values: &[f64]) -> Result<()> {
    for &v in values {
        if !v.is_finite() {
            return Err(Error::Domain {
                column: name.to_string(),
                detail: format!("non-finite value {v}"),
            });
        }
    }
    match meta {
        ColumnMeta::Binary => {
            for &v in values {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Domain {
                        column: name.to_string(),
                        detail: format!("domain violation: binary column contains {v}"),
                    });
                }
            }
        }
        ColumnMeta::Categorical { levels } => {
            for &v in values {
                if v.fract() != 0.0 || v < 0.0 || v >= levels as f64 {
                    return Err(Error::Domain {
                        column: name.to_string(),
                        detail: format!(
                            "domain violation: categorical code {v} outside 0..{levels}"
                        ),
                    });
                }
            }
        }
        ColumnMeta::Continuous => {}
    }
    Ok(())
}

/// Load a CSV file, keeping only the schema-declared columns.
///
/// Rows with an empty or unparseable cell in any declared column are dropped
/// and counted on the returned dataset. Categorical level counts are
/// inferred as `max code + 1`.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.len());
    for (name, _) in schema {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
        positions.push(pos);
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    let mut dropped = 0usize;
    let mut parsed_row = Vec::with_capacity(schema.len());
    for record in rdr.records() {
        let record = record?;
        parsed_row.clear();
        let mut ok = true;
        for &pos in &positions {
            let cell = record.get(pos).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed_row.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            for (col, &v) in columns.iter_mut().zip(parsed_row.iter()) {
                col.push(v);
            }
        } else {
            dropped += 1;
        }
    }

    if columns[0].is_empty() {
        return Err(Error::EmptyAfterCleaning { dropped });
    }

    let mut cols = Vec::with_capacity(schema.len());
    for ((name, role), values) in schema.iter().zip(columns) {
        let meta = match role {
            ColumnRole::Binary => ColumnMeta::Binary,
            ColumnRole::Continuous => ColumnMeta::Continuous,
            ColumnRole::Categorical => {
                let max = values.iter().copied().fold(0.0f64, f64::max);
                ColumnMeta::Categorical {
                    levels: max as usize + 1,
                }
            }
        };
        cols.push((name.clone(), meta, values));
    }
    let mut ds = Dataset::from_columns(cols).map_err(|e| match e {
        Error::EmptyAfterCleaning { .. } => Error::EmptyAfterCleaning { dropped },
        other => other,
    })?;
    ds.dropped_rows = dropped;
    Ok(ds)
}

/// Column transforms applied by [`derive_columns`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// Append `ln1p_<src>` = ln(1 + src). The source must be non-negative.
    Log1p { src: String },
    /// Append `<src>_1` .. `<src>_{k-1}` indicators for a categorical
    /// column with k levels; level 0 is the base.
    Dummy { src: String },
}

/// Apply transforms, appending columns to a copy of the dataset. Existing
/// columns are never mutated.
pub fn derive_columns(d: &Dataset, transforms: &[Transform]) -> Result<Dataset> {
    let mut out = d.clone();
    for t in transforms {
        match t {
            Transform::Log1p { src } => {
                let values = out.column(src)?;
                if let Some(v) = values.iter().find(|v| **v < 0.0) {
                    return Err(Error::Domain {
                        column: src.clone(),
                        detail: format!("log1p requires non-negative input, found {v}"),
                    });
                }
                let derived: Vec<f64> = values.iter().map(|&v| v.ln_1p()).collect();
                out = out.with_column(&format!("ln1p_{src}"), ColumnMeta::Continuous, derived)?;
            }
            Transform::Dummy { src } => {
                let levels = match out.meta(src)? {
                    ColumnMeta::Categorical { levels } => levels,
                    other => {
                        return Err(Error::Domain {
                            column: src.clone(),
                            detail: format!("dummy requires a categorical column, got {other}"),
                        })
                    }
                };
                let values = out.column(src)?.to_vec();
                for level in 1..levels {
                    let indicator: Vec<f64> = values
                        .iter()
                        .map(|&v| if v as usize == level { 1.0 } else { 0.0 })
                        .collect();
                    out = out.with_column(
                        &format!("{src}_{level}"),
                        ColumnMeta::Binary,
                        indicator,
                    )?;
                }
            }
        }
    }
    Ok(out)
}

/// One row of a descriptive-statistics table.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Descriptive statistics, one row per (group, variable).
#[derive(Debug, Clone, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

/// Mean with Neumaier-compensated summation.
pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values) / values.len() as f64
}

fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample standard deviation (n-1 denominator); 0 for a single observation.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|&v| (v - m) * (v - m)).collect();
    (compensated_sum(&sq) / (n - 1) as f64).sqrt()
}

fn summarize(label: String, values: &[f64]) -> SummaryRow {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    SummaryRow {
        label,
        n: values.len(),
        mean: mean(values),
        sd: sample_sd(values),
        min,
        max,
    }
}

/// Per-group (or overall) N/mean/sd/min/max for the listed variables.
///
/// When `group` names a binary or categorical column, every declared level
/// must be populated; an absent level is an error rather than a silent gap.
pub fn group_describe(d: &Dataset, group: Option<&str>, vars: &[String]) -> Result<SummaryTable> {
    for v in vars {
        if !d.has_column(v) {
            return Err(Error::UnknownColumn(v.clone()));
        }
    }
    let mut rows = Vec::new();
    match group {
        None => {
            for v in vars {
                rows.push(summarize(v.clone(), d.column(v)?));
            }
        }
        Some(g) => {
            let levels = d.levels(g)?;
            let codes = d.column(g)?;
            for level in 0..levels {
                let idx: Vec<usize> = codes
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c as usize == level)
                    .map(|(i, _)| i)
                    .collect();
                if idx.is_empty() {
                    return Err(Error::EmptyGroup(format!("{g}={level}")));
                }
                for v in vars {
                    let col = d.column(v)?;
                    let subset: Vec<f64> = idx.iter().map(|&i| col[i]).collect();
                    rows.push(summarize(format!("{v} | {g}={level}"), &subset));
                }
            }
        }
    }
    Ok(SummaryTable { rows })
}

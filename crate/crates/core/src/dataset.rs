//! Dataset metadata, CSV loading and typed column access.
//!
//! A dataset is described by a small JSON metadata file naming the action
//! column, the outcome column and the dtype of every column. The CSV itself is
//! parsed into column-major storage with explicit missing markers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default cap on [`distinct_values`] output.
pub const DEFAULT_DISTINCT_LIMIT: usize = 25;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed metadata json: {0}")]
    MalformedMetadata(String),
    #[error("metadata is missing required field `{0}`")]
    MissingField(String),
    #[error("unknown dtype `{dtype}` for column `{column}`")]
    UnknownDtype { column: String, dtype: String },
    #[error("action column and outcome column are both `{0}`")]
    ActionEqualsOutcome(String),
    #[error("duplicate column `{0}` in metadata")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("csv header is missing metadata columns: {0:?}")]
    HeaderMismatch(Vec<String>),
    #[error("csv parse error: {0}")]
    Csv(String),
    #[error("table has no usable rows ({dropped} rows dropped)")]
    EmptyTable { dropped: usize },
}

/// Declared type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Numeric,
    Categorical,
    Boolean,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Numeric => "numeric",
            Dtype::Categorical => "categorical",
            Dtype::Boolean => "boolean",
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "numeric" => Some(Dtype::Numeric),
            "categorical" => Some(Dtype::Categorical),
            "boolean" => Some(Dtype::Boolean),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub dtype: Dtype,
    pub description: String,
    /// Whether the column participates in NLU and analysis.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub supported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub title: String,
    pub path: String,
    #[serde(rename = "action")]
    pub action_column: String,
    #[serde(rename = "outcome")]
    pub outcome_column: String,
    pub columns: Vec<ColumnSpec>,
    /// Optional explicit cost per action level, keyed by the level label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_costs: Option<BTreeMap<String, f64>>,
}

impl DatasetMetadata {
    /// Parse and validate metadata from a JSON string.
    pub fn from_json_str(text: &str) -> Result<Self, DatasetError> {
        let raw: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| DatasetError::MalformedMetadata(e.to_string()))?;
        let obj = raw
            .as_object()
            .ok_or_else(|| DatasetError::MalformedMetadata("top level must be an object".into()))?;

        let string_field = |key: &str| -> Result<String, DatasetError> {
            match obj.get(key) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(serde_json::Value::Null) | None => Err(DatasetError::MissingField(key.into())),
                Some(other) => Err(DatasetError::MalformedMetadata(format!(
                    "field `{key}` must be a string, got {other}"
                ))),
            }
        };

        let title = string_field("title")?;
        let path = string_field("path")?;
        let action_column = string_field("action")?;
        let outcome_column = string_field("outcome")?;
        let cols = obj
            .get("columns")
            .and_then(|c| c.as_array())
            .ok_or_else(|| DatasetError::MissingField("columns".into()))?;

        let mut columns = Vec::with_capacity(cols.len());
        for (i, col) in cols.iter().enumerate() {
            let name = col
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| DatasetError::MissingField(format!("columns[{i}].name")))?
                .to_string();
            let dtype_str = col
                .get("dtype")
                .and_then(|v| v.as_str())
                .ok_or_else(|| DatasetError::MissingField(format!("columns[{i}].dtype")))?;
            let dtype = Dtype::parse(dtype_str).ok_or_else(|| DatasetError::UnknownDtype {
                column: name.clone(),
                dtype: dtype_str.to_string(),
            })?;
            let description = col
                .get("description")
                .and_then(|v| v.as_str())
                .filter(|d| !d.trim().is_empty())
                .ok_or_else(|| DatasetError::MissingField(format!("columns[{i}].description")))?
                .to_string();
            let supported = col.get("supported").and_then(|v| v.as_bool()).unwrap_or(true);
            columns.push(ColumnSpec {
                name,
                dtype,
                description,
                supported,
            });
        }

        let action_costs = match obj.get("action_costs") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value(v.clone())
                    .map_err(|e| DatasetError::MalformedMetadata(format!("action_costs: {e}")))?,
            ),
        };

        let meta = DatasetMetadata {
            title,
            path,
            action_column,
            outcome_column,
            columns,
            action_costs,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DatasetError::DuplicateColumn(c.name.clone()));
            }
        }
        if self.action_column == self.outcome_column {
            return Err(DatasetError::ActionEqualsOutcome(self.action_column.clone()));
        }
        for name in [&self.action_column, &self.outcome_column] {
            if !seen.contains(name.as_str()) {
                return Err(DatasetError::UnknownColumn(name.clone()));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut ColumnSpec> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn action_spec(&self) -> &ColumnSpec {
        self.column(&self.action_column).expect("validated action column")
    }

    pub fn outcome_spec(&self) -> &ColumnSpec {
        self.column(&self.outcome_column).expect("validated outcome column")
    }

    /// Supported columns other than action and outcome, in metadata order.
    pub fn covariates(&self) -> Vec<&ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| c.supported && c.name != self.action_column && c.name != self.outcome_column)
            .collect()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates().into_iter().map(|c| c.name.clone()).collect()
    }

    pub fn is_covariate(&self, name: &str) -> bool {
        self.covariates().iter().any(|c| c.name == name)
    }
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<DatasetMetadata, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DatasetError::FileNotFound(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    DatasetMetadata::from_json_str(&text)
}

/// A single cell value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
    Bool(bool),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Text(_) => None,
        }
    }

    /// Canonical literal used for exact-match comparison and prompt rendering.
    pub fn canonical(&self) -> String {
        self.to_string()
    }

    /// Parse a literal according to a dtype, returning `None` when it does
    /// not fit.
    pub fn parse_as(raw: &str, dtype: Dtype) -> Option<Value> {
        match dtype {
            Dtype::Numeric => parse_number(raw).map(Value::Number),
            Dtype::Boolean => parse_bool(raw).map(Value::Bool),
            Dtype::Categorical => {
                let t = raw.trim();
                if t.is_empty() {
                    None
                } else {
                    Some(Value::Text(t.to_string()))
                }
            }
        }
    }

    pub fn fits(&self, dtype: Dtype) -> bool {
        matches!(
            (self, dtype),
            (Value::Number(x), Dtype::Numeric) if x.is_finite()
        ) || matches!((self, dtype), (Value::Text(_), Dtype::Categorical))
            || matches!((self, dtype), (Value::Bool(_), Dtype::Boolean))
    }

    /// Coerce a JSON value to a typed cell value.
    pub fn from_json(v: &serde_json::Value, dtype: Dtype) -> Option<Value> {
        match v {
            serde_json::Value::Number(n) => {
                let x = n.as_f64()?;
                match dtype {
                    Dtype::Numeric if x.is_finite() => Some(Value::Number(x)),
                    Dtype::Boolean if x == 0.0 || x == 1.0 => Some(Value::Bool(x == 1.0)),
                    Dtype::Categorical => Some(Value::Text(Value::Number(x).to_string())),
                    _ => None,
                }
            }
            serde_json::Value::Bool(b) => match dtype {
                Dtype::Boolean => Some(Value::Bool(*b)),
                _ => None,
            },
            serde_json::Value::String(s) => Value::parse_as(s, dtype),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(x) => {
                if x.fract() == 0.0 && x.abs() < 9.0e15 {
                    s.serialize_i64(*x as i64)
                } else {
                    s.serialize_f64(*x)
                }
            }
            Value::Text(t) => s.serialize_str(t),
            Value::Bool(b) => s.serialize_bool(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Value::Number)
                .ok_or_else(|| serde::de::Error::custom("number out of range")),
            serde_json::Value::String(s) => Ok(Value::Text(s)),
            serde_json::Value::Bool(b) => Ok(Value::Bool(b)),
            other => Err(serde::de::Error::custom(format!("unsupported value {other}"))),
        }
    }
}

/// Integer and decimal literals only; thousands separators are rejected.
pub fn parse_number(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() || t.contains(',') || t.contains('_') {
        return None;
    }
    let body = t.strip_prefix(['-', '+']).unwrap_or(t);
    if body.is_empty() {
        return None;
    }
    let mut dots = 0;
    let mut digits = 0;
    for ch in body.chars() {
        match ch {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return None,
        }
    }
    if dots > 1 || digits == 0 {
        return None;
    }
    t.parse::<f64>().ok().filter(|x| x.is_finite())
}

pub fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "yes" | "true" | "1" => Some(true),
        "no" | "false" | "0" => Some(false),
        _ => None,
    }
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t == "NA"
}

/// Column-major storage for one column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
    Boolean(Vec<Option<bool>>),
}

impl ColumnData {
    fn with_capacity(dtype: Dtype, n: usize) -> Self {
        match dtype {
            Dtype::Numeric => ColumnData::Numeric(Vec::with_capacity(n)),
            Dtype::Categorical => ColumnData::Categorical(Vec::with_capacity(n)),
            Dtype::Boolean => ColumnData::Boolean(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ColumnData::Numeric(_) => Dtype::Numeric,
            ColumnData::Categorical(_) => Dtype::Categorical,
            ColumnData::Boolean(_) => Dtype::Boolean,
        }
    }

    pub fn get(&self, row: usize) -> Option<Value> {
        match self {
            ColumnData::Numeric(v) => v[row].map(Value::Number),
            ColumnData::Categorical(v) => v[row].clone().map(Value::Text),
            ColumnData::Boolean(v) => v[row].map(Value::Bool),
        }
    }

    /// Numeric view of a cell: numbers as-is, booleans as 0/1.
    pub fn get_f64(&self, row: usize) -> Option<f64> {
        match self {
            ColumnData::Numeric(v) => v[row],
            ColumnData::Boolean(v) => v[row].map(|b| if b { 1.0 } else { 0.0 }),
            ColumnData::Categorical(_) => None,
        }
    }

    fn push_raw(&mut self, raw: &str) -> bool {
        let missing = is_missing(raw);
        match self {
            ColumnData::Numeric(v) => {
                let parsed = if missing { None } else { parse_number(raw) };
                v.push(parsed);
                parsed.is_some()
            }
            ColumnData::Categorical(v) => {
                let parsed = if missing { None } else { Some(raw.trim().to_string()) };
                let ok = parsed.is_some();
                v.push(parsed);
                ok
            }
            ColumnData::Boolean(v) => {
                let parsed = if missing { None } else { parse_bool(raw) };
                v.push(parsed);
                parsed.is_some()
            }
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
            ColumnData::Boolean(v) => ColumnData::Boolean(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Typed, immutable table.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<ColumnData>,
    index: HashMap<String, usize>,
    row_count: usize,
    dropped_rows: usize,
}

impl DataTable {
    /// Build a table from already-typed columns. All columns must share a length.
    pub fn from_columns(cols: Vec<(String, ColumnData)>) -> Result<Self, DatasetError> {
        let row_count = cols.first().map(|(_, c)| c.len()).unwrap_or(0);
        let mut names = Vec::with_capacity(cols.len());
        let mut columns = Vec::with_capacity(cols.len());
        let mut index = HashMap::new();
        for (name, data) in cols {
            if data.len() != row_count {
                return Err(DatasetError::Csv(format!(
                    "column `{name}` has {} rows, expected {row_count}",
                    data.len()
                )));
            }
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(DatasetError::DuplicateColumn(name));
            }
            names.push(name);
            columns.push(data);
        }
        Ok(DataTable {
            names,
            columns,
            index,
            row_count,
            dropped_rows: 0,
        })
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData, DatasetError> {
        self.index
            .get(name)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn value(&self, column: &str, row: usize) -> Result<Option<Value>, DatasetError> {
        Ok(self.column(column)?.get(row))
    }

    /// A new table containing only `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            index: self.index.clone(),
            row_count: rows.len(),
            dropped_rows: 0,
        }
    }

    /// SHA-256 over a canonical encoding of every cell.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.row_count as u64).to_le_bytes());
        for (name, col) in self.names.iter().zip(&self.columns) {
            h.update(name.as_bytes());
            h.update([0u8, col.dtype() as u8]);
            for row in 0..self.row_count {
                match col.get(row) {
                    None => h.update([0xff]),
                    Some(Value::Number(x)) => {
                        h.update([1]);
                        h.update(x.to_bits().to_le_bytes());
                    }
                    Some(Value::Text(s)) => {
                        h.update([2]);
                        h.update((s.len() as u64).to_le_bytes());
                        h.update(s.as_bytes());
                    }
                    Some(Value::Bool(b)) => h.update([3, b as u8]),
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// First `n` rows as JSON objects keyed by column name.
    pub fn preview(&self, n: usize) -> Vec<BTreeMap<String, Option<Value>>> {
        (0..self.row_count.min(n))
            .map(|r| {
                self.names
                    .iter()
                    .zip(&self.columns)
                    .map(|(name, c)| (name.clone(), c.get(r)))
                    .collect()
            })
            .collect()
    }

    /// Serialize back to CSV (header + rows, missing cells empty).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.names).expect("in-memory write");
        for r in 0..self.row_count {
            let rec: Vec<String> = self
                .columns
                .iter()
                .map(|c| c.get(r).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Load the CSV named by `meta.path`.
pub fn load_table(meta: &DatasetMetadata) -> Result<DataTable, DatasetError> {
    load_table_at(meta, Path::new(&meta.path))
}

/// Load a CSV from an explicit path, typed according to `meta`.
///
/// Rows whose action or outcome cell is missing or unparseable are dropped
/// and counted; other unparseable cells become missing markers.
pub fn load_table_at(meta: &DatasetMetadata, path: &Path) -> Result<DataTable, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DatasetError::FileNotFound(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    parse_table(meta, &bytes)
}

pub fn parse_table(meta: &DatasetMetadata, bytes: &[u8]) -> Result<DataTable, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let positions: HashMap<&str, usize> =
        header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let missing: Vec<String> = meta
        .columns
        .iter()
        .filter(|c| !positions.contains_key(c.name.as_str()))
        .map(|c| c.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::HeaderMismatch(missing));
    }

    let mut columns: Vec<ColumnData> = meta
        .columns
        .iter()
        .map(|c| ColumnData::with_capacity(c.dtype, 1024))
        .collect();
    let action_idx = meta
        .columns
        .iter()
        .position(|c| c.name == meta.action_column)
        .expect("validated");
    let outcome_idx = meta
        .columns
        .iter()
        .position(|c| c.name == meta.outcome_column)
        .expect("validated");

    let mut kept = 0usize;
    let mut dropped = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let cells: Vec<&str> = meta
            .columns
            .iter()
            .map(|c| rec.get(positions[c.name.as_str()]).unwrap_or(""))
            .collect();
        let key_ok = [action_idx, outcome_idx].iter().all(|&i| {
            let mut probe = ColumnData::with_capacity(meta.columns[i].dtype, 1);
            probe.push_raw(cells[i])
        });
        if !key_ok {
            dropped += 1;
            continue;
        }
        for (col, raw) in columns.iter_mut().zip(&cells) {
            col.push_raw(raw);
        }
        kept += 1;
    }
    if kept == 0 {
        return Err(DatasetError::EmptyTable { dropped });
    }
    let mut table = DataTable::from_columns(
        meta.columns
            .iter()
            .map(|c| c.name.clone())
            .zip(columns)
            .collect(),
    )?;
    table.dropped_rows = dropped;
    Ok(table)
}

/// Distinct non-missing values of a column in first-occurrence order.
pub fn distinct_values(
    table: &DataTable,
    column: &str,
    limit: usize,
) -> Result<Vec<Value>, DatasetError> {
    let col = table.column(column)?;
    let mut out = Vec::new();
    match col {
        ColumnData::Numeric(v) => {
            let mut seen = HashSet::new();
            for x in v.iter().flatten() {
                if out.len() >= limit {
                    break;
                }
                // -0.0 and 0.0 are the same value
                let key = if *x == 0.0 { 0u64 } else { x.to_bits() };
                if seen.insert(key) {
                    out.push(Value::Number(*x));
                }
            }
        }
        ColumnData::Categorical(v) => {
            let mut seen = HashSet::new();
            for s in v.iter().flatten() {
                if out.len() >= limit {
                    break;
                }
                if seen.insert(s.as_str()) {
                    out.push(Value::Text(s.clone()));
                }
            }
        }
        ColumnData::Boolean(v) => {
            let mut seen = [false; 2];
            for b in v.iter().flatten() {
                if out.len() >= limit {
                    break;
                }
                if !seen[*b as usize] {
                    seen[*b as usize] = true;
                    out.push(Value::Bool(*b));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BANK_META: &str = r#"{
        "title": "Bank Marketing",
        "path": "bank.csv",
        "action": "CAMPAIGN",
        "outcome": "CONVERSION",
        "columns": [
            {"name": "CAMPAIGN", "dtype": "numeric", "description": "calls made"},
            {"name": "CONVERSION", "dtype": "boolean", "description": "subscribed"},
            {"name": "euribor3m", "dtype": "numeric", "description": "3 month euribor rate"},
            {"name": "job", "dtype": "categorical", "description": "job type", "supported": false}
        ]
    }"#;

    fn meta() -> DatasetMetadata {
        DatasetMetadata::from_json_str(BANK_META).unwrap()
    }

    #[test]
    fn bank_metadata_parses() {
        let m = meta();
        assert_eq!(m.action_column, "CAMPAIGN");
        assert_eq!(m.outcome_column, "CONVERSION");
        assert!(!m.column("job").unwrap().supported);
        assert_eq!(m.covariate_names(), vec!["euribor3m".to_string()]);
    }

    #[test]
    fn action_equal_outcome_is_rejected() {
        let text = BANK_META.replace("\"outcome\": \"CONVERSION\"", "\"outcome\": \"CAMPAIGN\"");
        assert!(matches!(
            DatasetMetadata::from_json_str(&text),
            Err(DatasetError::ActionEqualsOutcome(_))
        ));
    }

    #[test]
    fn missing_title_is_reported() {
        let text = BANK_META.replace("\"title\": \"Bank Marketing\",", "");
        match DatasetMetadata::from_json_str(&text) {
            Err(DatasetError::MissingField(f)) => assert_eq!(f, "title"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_and_duplicates() {
        let text = BANK_META.replace("\"dtype\": \"categorical\"", "\"dtype\": \"date\"");
        assert!(matches!(
            DatasetMetadata::from_json_str(&text),
            Err(DatasetError::UnknownDtype { .. })
        ));
        let text = BANK_META.replace("\"name\": \"job\"", "\"name\": \"euribor3m\"");
        assert!(matches!(
            DatasetMetadata::from_json_str(&text),
            Err(DatasetError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn metadata_round_trips_through_json() {
        let m = meta();
        let again = DatasetMetadata::from_json_str(&m.to_json_pretty()).unwrap();
        assert_eq!(m, again);
    }

    const CSV8: &str = "CAMPAIGN,CONVERSION,euribor3m,job\n\
        0,no,4.964,admin.\n\
        1,yes,4.964,technician\n\
        2,no,1.3,admin.\n\
        0,yes,NA,services\n\
        1,no,0.7,\n\
        2,yes,1.3,admin.\n\
        0,no,4.857,technician\n\
        1,no,4.964,services\n";

    #[test]
    fn eight_row_fixture() {
        let t = parse_table(&meta(), CSV8.as_bytes()).unwrap();
        assert_eq!(t.row_count(), 8);
        assert_eq!(t.dropped_rows(), 0);
        assert_eq!(t.value("euribor3m", 3).unwrap(), None);
        assert_eq!(t.value("CONVERSION", 1).unwrap(), Some(Value::Bool(true)));
    }

    #[test]
    fn header_without_outcome() {
        let csv = "CAMPAIGN,euribor3m,job\n0,1.0,a\n";
        match parse_table(&meta(), csv.as_bytes()) {
            Err(DatasetError::HeaderMismatch(cols)) => assert_eq!(cols, vec!["CONVERSION"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_covariate_cell_becomes_missing() {
        let csv = "CAMPAIGN,CONVERSION,euribor3m,job\n0,no,abc,a\n1,yes,1.5,b\n2,maybe,1.0,c\n";
        let t = parse_table(&meta(), csv.as_bytes()).unwrap();
        // Independent scan: rows whose CONVERSION cell is a recognised boolean.
        let expected_rows = csv
            .lines()
            .skip(1)
            .filter(|l| {
                let c = l.split(',').nth(1).unwrap();
                ["yes", "no", "true", "false", "0", "1"].contains(&c)
            })
            .count();
        assert_eq!(t.row_count(), expected_rows);
        assert_eq!(t.dropped_rows(), 1);
        assert_eq!(t.value("euribor3m", 0).unwrap(), None);
    }

    #[test]
    fn thousands_separator_rejected() {
        assert_eq!(parse_number("1,000"), None);
        assert_eq!(parse_number("4.964"), Some(4.964));
        assert_eq!(parse_number("-3"), Some(-3.0));
        assert_eq!(parse_number("1e5"), None);
        assert_eq!(parse_number("."), None);
    }

    #[test]
    fn distinct_values_rules() {
        let t = parse_table(&meta(), CSV8.as_bytes()).unwrap();
        let conv = distinct_values(&t, "CONVERSION", 25).unwrap();
        assert_eq!(conv, vec![Value::Bool(false), Value::Bool(true)]);
        let eur = distinct_values(&t, "euribor3m", 25).unwrap();
        assert_eq!(eur[0], Value::Number(4.964));
        assert!(!eur.iter().any(|v| matches!(v, Value::Text(_))));
        assert_eq!(distinct_values(&t, "euribor3m", 2).unwrap().len(), 2);
        assert!(matches!(
            distinct_values(&t, "nope", 3),
            Err(DatasetError::UnknownColumn(_))
        ));
    }

    #[test]
    fn constant_column_single_value() {
        let t = DataTable::from_columns(vec![(
            "c".into(),
            ColumnData::Numeric(vec![Some(2.0); 5]),
        )])
        .unwrap();
        assert_eq!(distinct_values(&t, "c", 25).unwrap(), vec![Value::Number(2.0)]);
    }

    #[test]
    fn digest_is_stable() {
        let a = parse_table(&meta(), CSV8.as_bytes()).unwrap();
        let b = parse_table(&meta(), CSV8.as_bytes()).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = a.select_rows(&[0, 1, 2]);
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn integral_numbers_serialize_as_integers() {
        assert_eq!(serde_json::to_string(&Value::Number(4.0)).unwrap(), "4");
        assert_eq!(serde_json::to_string(&Value::Number(4.964)).unwrap(), "4.964");
    }
}

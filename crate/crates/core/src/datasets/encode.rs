use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::{min_max_normalize, TabularDataset};
use crate::error::{Error, Result};

/// Encoded but not yet normalised table.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub columns: Vec<String>,
    /// Row-major, `n x columns.len()`.
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub sensitive: BTreeMap<String, Vec<u8>>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.values.iter().skip(c).step_by(self.columns.len()).copied().collect())
    }

    pub fn into_dataset(mut self) -> Result<TabularDataset> {
        min_max_normalize(&mut self.values, self.columns.len());
        TabularDataset::new(self.name, self.columns, self.values, self.labels, self.num_classes, self.sensitive)
    }
}

pub(crate) struct CsvRecords {
    pub file: PathBuf,
    headers: Vec<String>,
    /// (1-based line number, fields)
    pub rows: Vec<(u64, Vec<String>)>,
}

pub(crate) fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "?" || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

pub(crate) fn ingestion(file: &Path, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::Ingestion {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a delimited text file; the delimiter is `;` if the header line
/// contains one, otherwise `,`.
pub(crate) fn read_csv(path: &Path) -> Result<CsvRecords> {
    let text = std::fs::read_to_string(path).map_err(|e| ingestion(path, None, format!("cannot read file: {e}")))?;
    let first = text.lines().next().unwrap_or_default();
    let delimiter = if first.contains(';') { b';' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ingestion(path, Some(1), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            ingestion(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or_default();
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(CsvRecords {
        file: path.to_path_buf(),
        headers,
        rows,
    })
}

impl CsvRecords {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| ingestion(&self.file, Some(1), format!("missing column `{name}`")))
    }

    /// Drops rows where any of the named columns is missing.
    pub fn drop_missing(&mut self, columns: &[&str]) -> Result<usize> {
        let idx: Vec<usize> = columns.iter().map(|c| self.column_index(c)).collect::<Result<_>>()?;
        let before = self.rows.len();
        self.rows
            .retain(|(_, fields)| idx.iter().all(|&i| fields.get(i).is_some_and(|f| !is_missing(f))));
        Ok(before - self.rows.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum ColumnKind {
    Numeric,
    /// Two known levels mapped to 0 and 1.
    Binary(&'static str, &'static str),
    /// One-hot over the sorted distinct levels present in the file.
    Categorical,
}

pub(crate) struct Encoded {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

pub(crate) fn parse_number(records: &CsvRecords, line: u64, column: &str, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ingestion(&records.file, Some(line), format!("column `{column}`: cannot parse `{field}` as a number")))
}

pub(crate) fn binary_level(records: &CsvRecords, line: u64, column: &str, field: &str, zero: &str, one: &str) -> Result<u8> {
    let f = field.trim();
    if f.eq_ignore_ascii_case(zero) {
        Ok(0)
    } else if f.eq_ignore_ascii_case(one) {
        Ok(1)
    } else {
        Err(ingestion(
            &records.file,
            Some(line),
            format!("column `{column}`: expected `{zero}` or `{one}`, got `{field}`"),
        ))
    }
}

pub(crate) fn encode(records: &CsvRecords, schema: &[(&str, ColumnKind)]) -> Result<Encoded> {
    let mut names = Vec::new();
    let mut plans = Vec::new();
    for &(column, kind) in schema {
        let idx = records.column_index(column)?;
        match kind {
            ColumnKind::Categorical => {
                let levels: Vec<String> = records
                    .rows
                    .iter()
                    .map(|(_, f)| f[idx].trim().to_string())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                names.extend(levels.iter().map(|l| format!("{column}={l}")));
                plans.push((column, idx, kind, levels));
            }
            _ => {
                names.push(column.to_string());
                plans.push((column, idx, kind, Vec::new()));
            }
        }
    }
    let mut values = Vec::with_capacity(records.rows.len() * names.len());
    for (line, fields) in &records.rows {
        for (column, idx, kind, levels) in &plans {
            let field = fields
                .get(*idx)
                .ok_or_else(|| ingestion(&records.file, Some(*line), "row has too few fields"))?;
            match kind {
                ColumnKind::Numeric => values.push(parse_number(records, *line, column, field)?),
                ColumnKind::Binary(zero, one) => {
                    values.push(binary_level(records, *line, column, field, zero, one)? as f64)
                }
                ColumnKind::Categorical => {
                    let f = field.trim();
                    values.extend(levels.iter().map(|l| if l == f { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    Ok(Encoded { names, values })
}

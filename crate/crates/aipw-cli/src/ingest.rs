//! CSV ingestion: header-addressed columns, binary-treatment parsing,
//! numeric-column detection, and one-hot expansion of named categorical
//! columns. Errors carry row and column context (data rows counted from 1).

use std::collections::BTreeSet;
use std::path::Path;

use aipw::{Dataset, Error, Observation, Result};

/// A fully loaded CSV table: trimmed headers and string cells, row order
/// preserved.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Which columns become covariates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovariateSelection {
    /// Every column (other than treatment, outcome, and exclusions) whose
    /// cells all parse as finite numbers.
    Auto,
    /// Exactly these columns; a non-numeric one is one-hot encoded with the
    /// first (sorted) level dropped.
    Named(Vec<String>),
}

/// A validated dataset plus the expanded covariate column names (one-hot
/// indicators appear as `column=level`).
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: Dataset,
    pub feature_names: Vec<String>,
}

/// Reads a comma-delimited UTF-8 file with a header row. Rows must all have
/// the header's width; cells are whitespace-trimmed.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("{}: bad header row: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::InvalidInput(format!("{}: empty header row", path.display())));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::InvalidInput(format!("{}: row {}: {e}", path.display(), i + 1))
        })?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows after the header",
            path.display()
        )));
    }
    Ok(Table { headers, rows })
}

fn column_index(table: &Table, name: &str) -> Result<usize> {
    let matches: Vec<usize> = table
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() == name)
        .map(|(i, _)| i)
        .collect();
    match matches.len() {
        0 => Err(Error::InvalidInput(format!(
            "column {name:?} not found; headers are {:?}",
            table.headers
        ))),
        1 => Ok(matches[0]),
        k => Err(Error::InvalidInput(format!("column {name:?} appears {k} times in the header"))),
    }
}

/// Parses the treatment column: accepts 0/1 and true/false in any case.
pub fn treatment_column(table: &Table, name: &str) -> Result<Vec<u8>> {
    let idx = column_index(table, name)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let cell = &row[idx];
        let parsed = match cell.to_ascii_lowercase().as_str() {
            "0" | "false" => 0u8,
            "1" | "true" => 1u8,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "row {}: treatment value {cell:?} is not binary (want 0/1 or true/false)",
                    r + 1
                )))
            }
        };
        out.push(parsed);
    }
    Ok(out)
}

fn parse_number(cell: &str, row: usize, col: &str) -> Result<f64> {
    if cell.is_empty() {
        return Err(Error::InvalidInput(format!(
            "row {}, column {col:?}: missing value",
            row + 1
        )));
    }
    let v: f64 = cell.parse().map_err(|_| {
        Error::InvalidInput(format!("row {}, column {col:?}: {cell:?} is not a number", row + 1))
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!(
            "row {}, column {col:?}: {cell:?} is not finite",
            row + 1
        )));
    }
    Ok(v)
}

/// Reads a fully numeric column; empty or non-numeric cells are row errors.
pub fn numeric_column(table: &Table, name: &str) -> Result<Vec<f64>> {
    let idx = column_index(table, name)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        out.push(parse_number(&row[idx], r, name)?);
    }
    Ok(out)
}

fn is_numeric_column(table: &Table, idx: usize) -> bool {
    table.rows.iter().all(|row| {
        let cell = row[idx].as_str();
        !cell.is_empty() && cell.parse::<f64>().map(f64::is_finite).unwrap_or(false)
    })
}

/// Indicator columns for every level but the first in sorted order; empty
/// cells are missing-value errors.
fn expand_one_hot(
    table: &Table,
    idx: usize,
    name: &str,
    feature_names: &mut Vec<String>,
    columns: &mut Vec<Vec<f64>>,
) -> Result<()> {
    for (r, row) in table.rows.iter().enumerate() {
        if row[idx].is_empty() {
            return Err(Error::InvalidInput(format!(
                "row {}, column {name:?}: missing value",
                r + 1
            )));
        }
    }
    let levels: BTreeSet<&str> = table.rows.iter().map(|row| row[idx].as_str()).collect();
    if levels.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "column {name:?} has a single level and carries no information"
        )));
    }
    for level in levels.iter().skip(1) {
        feature_names.push(format!("{name}={level}"));
        columns.push(
            table
                .rows
                .iter()
                .map(|row| f64::from(u8::from(row[idx].as_str() == *level)))
                .collect(),
        );
    }
    Ok(())
}

/// Assembles a [`Dataset`] from a table: treatment is parsed as binary, the
/// outcome column is numeric (zeros substituted when `outcome` is `None`,
/// for workflows that never read outcomes), and covariates follow the
/// selection rule. `exclude` names columns auto-selection must skip (for
/// example a supplied propensity column).
pub fn build_dataset(
    table: &Table,
    treatment: &str,
    outcome: Option<&str>,
    covariates: &CovariateSelection,
    exclude: &[&str],
) -> Result<Ingested> {
    let d = treatment_column(table, treatment)?;
    let y = match outcome {
        Some(col) => numeric_column(table, col)?,
        None => vec![0.0; table.rows.len()],
    };

    let mut feature_names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    match covariates {
        CovariateSelection::Auto => {
            for (idx, header) in table.headers.iter().enumerate() {
                if header == treatment
                    || Some(header.as_str()) == outcome
                    || exclude.contains(&header.as_str())
                {
                    continue;
                }
                if is_numeric_column(table, idx) {
                    feature_names.push(header.clone());
                    columns.push(numeric_column(table, header)?);
                }
            }
        }
        CovariateSelection::Named(names) => {
            for name in names {
                let idx = column_index(table, name)?;
                if is_numeric_column(table, idx) {
                    feature_names.push(name.clone());
                    columns.push(numeric_column(table, name)?);
                } else {
                    expand_one_hot(table, idx, name, &mut feature_names, &mut columns)?;
                }
            }
        }
    }
    if columns.is_empty() {
        return Err(Error::InvalidInput(
            "no usable covariate columns (name them with --covariates or add numeric columns)"
                .into(),
        ));
    }

    let dim = columns.len();
    let n = table.rows.len();
    let mut observations = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = columns.iter().map(|c| c[i]).collect();
        observations.push(Observation { d: d[i], y: y[i], x });
    }
    Ok(Ingested { data: Dataset::new(observations, dim)?, feature_names })
}

//! Indicator panels: CSV ingestion, standardization, imputation and target
//! alignment.
//!
//! A [`Panel`] is a dense (country, year) x metric table with a missingness
//! mask. Metrics are standardized to zero mean and unit variance over the
//! non-missing entries, and missing entries are filled with 0, which equals
//! the column mean after standardization.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of one sample row: a country observed in one year.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId {
    pub country: String,
    pub year: i32,
}

impl SampleId {
    pub fn new(country: impl Into<String>, year: i32) -> Self {
        Self {
            country: country.into(),
            year,
        }
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.country, self.year)
    }
}

/// Dense numeric table of samples x metrics with a missingness mask.
///
/// `values` and `missing` are row-major and always the same shape. Every
/// entry flagged missing holds 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub row_ids: Vec<SampleId>,
    pub column_ids: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl Panel {
    /// Build a panel from parts, enforcing shape and uniqueness invariants.
    pub fn new(
        row_ids: Vec<SampleId>,
        column_ids: Vec<String>,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        let n = row_ids.len() * column_ids.len();
        if values.len() != n || missing.len() != n {
            return Err(Error::Config(format!(
                "panel shape mismatch: {} rows x {} cols but {} values, {} flags",
                row_ids.len(),
                column_ids.len(),
                values.len(),
                missing.len()
            )));
        }
        let mut seen_rows = HashSet::new();
        for id in &row_ids {
            if !seen_rows.insert((id.country.as_str(), id.year)) {
                return Err(Error::DuplicateRow {
                    country: id.country.clone(),
                    year: id.year,
                });
            }
        }
        let mut seen_cols = HashSet::new();
        for id in &column_ids {
            if !seen_cols.insert(id.as_str()) {
                return Err(Error::MalformedHeader(format!("duplicate column {id:?}")));
            }
        }
        let mut panel = Self {
            row_ids,
            column_ids,
            values,
            missing,
        };
        // Missing entries always hold the sentinel 0.
        for (v, &m) in panel.values.iter_mut().zip(panel.missing.iter()) {
            if m {
                *v = 0.0;
            }
        }
        Ok(panel)
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_ids.len()
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        row * self.column_ids.len() + col
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[self.idx(row, col)]
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[self.idx(row, col)]
    }

    /// One sample row as a feature slice.
    pub fn row(&self, row: usize) -> &[f64] {
        let k = self.column_ids.len();
        &self.values[row * k..(row + 1) * k]
    }

    pub fn column_position(&self, id: &str) -> Option<usize> {
        self.column_ids.iter().position(|c| c == id)
    }

    /// New panel keeping only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Panel {
        let k = self.column_ids.len();
        let mut values = Vec::with_capacity(rows.len() * k);
        let mut missing = Vec::with_capacity(rows.len() * k);
        let mut row_ids = Vec::with_capacity(rows.len());
        for &r in rows {
            row_ids.push(self.row_ids[r].clone());
            values.extend_from_slice(&self.values[r * k..(r + 1) * k]);
            missing.extend_from_slice(&self.missing[r * k..(r + 1) * k]);
        }
        Panel {
            row_ids,
            column_ids: self.column_ids.clone(),
            values,
            missing,
        }
    }
}

/// Table layout of the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One metric per column; one row per (country, year).
    #[default]
    Wide,
    /// Tidy rows of (country, year, metric, value), pivoted internally.
    Long,
}

/// Which columns play which role, plus parsing options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub layout: Layout,
    pub country_column: String,
    pub year_column: String,
    /// Long layout only: the column holding metric names.
    pub metric_column: String,
    /// Long layout only: the column holding values.
    pub value_column: String,
    /// Cell contents treated as missing, in addition to empty cells.
    pub missing_sentinels: Vec<String>,
    /// Single-character field delimiter.
    pub delimiter: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            layout: Layout::Wide,
            country_column: "country".into(),
            year_column: "year".into(),
            metric_column: "metric".into(),
            value_column: "value".into(),
            missing_sentinels: vec!["NA".into(), "..".into()],
            delimiter: ",".into(),
        }
    }
}

impl Schema {
    fn delimiter_byte(&self) -> Result<u8> {
        let bytes = self.delimiter.as_bytes();
        if bytes.len() != 1 {
            return Err(Error::Config(format!(
                "delimiter must be one byte, got {:?}",
                self.delimiter
            )));
        }
        Ok(bytes[0])
    }

    fn is_missing_cell(&self, cell: &str) -> bool {
        let cell = cell.trim();
        cell.is_empty() || self.missing_sentinels.iter().any(|s| s == cell)
    }
}

/// Parse a cell as a value, classifying sentinels and non-numeric text as
/// missing.
fn parse_cell(schema: &Schema, cell: &str) -> (f64, bool) {
    if schema.is_missing_cell(cell) {
        return (0.0, true);
    }
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => (v, false),
        _ => (0.0, true),
    }
}

/// Load a delimited table into a [`Panel`].
///
/// Row order is first-appearance order in the source; for the long layout,
/// column order is first-appearance order of metric names. Empty cells,
/// sentinel strings and non-numeric cells become missing entries holding 0.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(source);

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::MalformedHeader(format!("duplicate column {h:?}")));
        }
    }
    let col_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedHeader(format!("column {name:?} not found")))
    };

    let country_col = col_of(&schema.country_column)?;
    let year_col = col_of(&schema.year_column)?;

    match schema.layout {
        Layout::Wide => {
            let metric_cols: Vec<usize> = (0..headers.len())
                .filter(|&i| i != country_col && i != year_col)
                .collect();
            if metric_cols.is_empty() {
                return Err(Error::NoMetricColumns);
            }
            let column_ids: Vec<String> =
                metric_cols.iter().map(|&i| headers[i].clone()).collect();

            let mut row_ids = Vec::new();
            let mut values = Vec::new();
            let mut missing = Vec::new();
            let mut seen_rows = HashSet::new();
            for (line, record) in reader.records().enumerate() {
                let record = record?;
                let id = parse_sample_id(&record, country_col, year_col, line + 2)?;
                if !seen_rows.insert((id.country.clone(), id.year)) {
                    return Err(Error::DuplicateRow {
                        country: id.country,
                        year: id.year,
                    });
                }
                row_ids.push(id);
                for &c in &metric_cols {
                    let (v, m) = parse_cell(schema, record.get(c).unwrap_or(""));
                    values.push(v);
                    missing.push(m);
                }
            }
            Panel::new(row_ids, column_ids, values, missing)
        }
        Layout::Long => {
            let metric_col = col_of(&schema.metric_column)?;
            let value_col = col_of(&schema.value_column)?;

            let mut row_ids: Vec<SampleId> = Vec::new();
            let mut row_index: HashMap<SampleId, usize> = HashMap::new();
            let mut column_ids: Vec<String> = Vec::new();
            let mut col_index: HashMap<String, usize> = HashMap::new();
            let mut cells: HashMap<(usize, usize), (f64, bool)> = HashMap::new();

            for (line, record) in reader.records().enumerate() {
                let record = record?;
                let id = parse_sample_id(&record, country_col, year_col, line + 2)?;
                let metric = record.get(metric_col).unwrap_or("").trim().to_string();
                if metric.is_empty() {
                    return Err(Error::MalformedRow {
                        row: line + 2,
                        reason: "empty metric name".into(),
                    });
                }
                let r = *row_index.entry(id.clone()).or_insert_with(|| {
                    row_ids.push(id.clone());
                    row_ids.len() - 1
                });
                let c = *col_index.entry(metric.clone()).or_insert_with(|| {
                    column_ids.push(metric.clone());
                    column_ids.len() - 1
                });
                let cell = parse_cell(schema, record.get(value_col).unwrap_or(""));
                if cells.insert((r, c), cell).is_some() {
                    return Err(Error::DuplicateCell {
                        country: row_ids[r].country.clone(),
                        year: row_ids[r].year,
                        metric,
                    });
                }
            }
            if column_ids.is_empty() {
                return Err(Error::NoMetricColumns);
            }
            let (nr, nc) = (row_ids.len(), column_ids.len());
            let mut values = vec![0.0; nr * nc];
            let mut missing = vec![true; nr * nc];
            for ((r, c), (v, m)) in cells {
                values[r * nc + c] = if m { 0.0 } else { v };
                missing[r * nc + c] = m;
            }
            Panel::new(row_ids, column_ids, values, missing)
        }
    }
}

fn parse_sample_id(
    record: &csv::StringRecord,
    country_col: usize,
    year_col: usize,
    line: usize,
) -> Result<SampleId> {
    let country = record.get(country_col).unwrap_or("").trim().to_string();
    if country.is_empty() {
        return Err(Error::MalformedRow {
            row: line,
            reason: "empty country".into(),
        });
    }
    let year_text = record.get(year_col).unwrap_or("").trim();
    let year = year_text.parse::<i32>().map_err(|_| Error::MalformedRow {
        row: line,
        reason: format!("year {year_text:?} is not an integer"),
    })?;
    Ok(SampleId { country, year })
}

/// Convenience wrapper over [`load_panel`] for a file path.
pub fn load_panel_path(path: impl AsRef<Path>, schema: &Schema) -> Result<Panel> {
    let file = std::fs::File::open(path.as_ref())?;
    load_panel(std::io::BufReader::new(file), schema)
}

/// Per-column standardization parameters.
///
/// Means and standard deviations are computed over non-missing entries with
/// the population divisor n. A column is flagged constant when its std is 0
/// or it has no non-missing entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub column_ids: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ScalerParams {
    /// No-op scaler (mean 0, std 1) for data that is already on model scale.
    pub fn identity(column_ids: &[String]) -> Self {
        let k = column_ids.len();
        Self {
            column_ids: column_ids.to_vec(),
            means: vec![0.0; k],
            stds: vec![1.0; k],
            constant: vec![false; k],
        }
    }
}

/// Fit per-column mean and population std over non-missing entries.
pub fn fit_scaler(panel: &Panel) -> Result<ScalerParams> {
    if panel.n_rows() == 0 {
        return Err(Error::EmptyPanel);
    }
    let (nr, nc) = (panel.n_rows(), panel.n_cols());
    let mut means = vec![0.0; nc];
    let mut stds = vec![0.0; nc];
    let mut constant = vec![false; nc];
    for c in 0..nc {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..nr {
            if !panel.is_missing(r, c) {
                sum += panel.value(r, c);
                count += 1;
            }
        }
        if count == 0 {
            constant[c] = true;
            continue;
        }
        let mean = sum / count as f64;
        let mut ss = 0.0;
        for r in 0..nr {
            if !panel.is_missing(r, c) {
                let d = panel.value(r, c) - mean;
                ss += d * d;
            }
        }
        let std = (ss / count as f64).sqrt();
        means[c] = mean;
        stds[c] = std;
        constant[c] = std == 0.0;
    }
    Ok(ScalerParams {
        column_ids: panel.column_ids.clone(),
        means,
        stds,
        constant,
    })
}

/// Standardize a panel with previously fitted parameters.
///
/// Non-missing entries become (v - mean) / std, constant columns become 0
/// everywhere, and missing entries stay 0, which is the column mean after
/// standardization. The missingness mask is preserved.
pub fn apply_scaler(panel: &Panel, params: &ScalerParams) -> Result<Panel> {
    if panel.column_ids != params.column_ids {
        return Err(Error::ColumnMismatch(format!(
            "scaler fit on {} columns, panel has {}",
            params.column_ids.len(),
            panel.column_ids.len()
        )));
    }
    let (nr, nc) = (panel.n_rows(), panel.n_cols());
    let mut values = vec![0.0; nr * nc];
    for r in 0..nr {
        for c in 0..nc {
            let i = r * nc + c;
            values[i] = if panel.is_missing(r, c) || params.constant[c] {
                0.0
            } else {
                (panel.value(r, c) - params.means[c]) / params.stds[c]
            };
        }
    }
    Ok(Panel {
        row_ids: panel.row_ids.clone(),
        column_ids: panel.column_ids.clone(),
        values,
        missing: panel.missing.clone(),
    })
}

/// Feature panel joined with a non-missing target score per row.
#[derive(Debug, Clone)]
pub struct SupervisedMatrix {
    pub features: Panel,
    pub target: Vec<f64>,
    pub target_name: String,
    /// Feature rows dropped because no target was available.
    pub dropped_rows: usize,
}

/// Join the target column onto the feature panel by (country, year).
///
/// Rows present in both panels with a non-missing target are kept in
/// feature-panel order; the rest are counted as dropped.
pub fn align_target(
    features: &Panel,
    targets: &Panel,
    target_column: &str,
) -> Result<SupervisedMatrix> {
    let col = targets
        .column_position(target_column)
        .ok_or_else(|| Error::MissingTargetColumn(target_column.to_string()))?;

    let mut score_of: HashMap<(&str, i32), f64> = HashMap::new();
    for (r, id) in targets.row_ids.iter().enumerate() {
        if !targets.is_missing(r, col) {
            score_of.insert((id.country.as_str(), id.year), targets.value(r, col));
        }
    }

    let mut kept = Vec::new();
    let mut target = Vec::new();
    for (r, id) in features.row_ids.iter().enumerate() {
        if let Some(&score) = score_of.get(&(id.country.as_str(), id.year)) {
            kept.push(r);
            target.push(score);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoRowsAfterJoin);
    }
    let dropped_rows = features.n_rows() - kept.len();
    Ok(SupervisedMatrix {
        features: features.select_rows(&kept),
        target,
        target_name: target_column.to_string(),
        dropped_rows,
    })
}

/// Write a panel as a wide CSV; missing entries become empty cells.
pub fn write_panel_csv<W: Write>(panel: &Panel, mut out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(&mut out);
    let mut header = vec!["country".to_string(), "year".to_string()];
    header.extend(panel.column_ids.iter().cloned());
    writer.write_record(&header)?;
    for (r, id) in panel.row_ids.iter().enumerate() {
        let mut record = vec![id.country.clone(), id.year.to_string()];
        for c in 0..panel.n_cols() {
            record.push(if panel.is_missing(r, c) {
                String::new()
            } else {
                format!("{}", panel.value(r, c))
            });
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Sidecar metadata for an exported panel: column roles and scaler params.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelSidecar {
    pub country_column: String,
    pub year_column: String,
    pub metric_columns: Vec<String>,
    pub scaler: Option<ScalerParams>,
}

pub fn write_panel_sidecar<W: Write>(sidecar: &PanelSidecar, mut out: W) -> Result<()> {
    let text = toml::to_string_pretty(sidecar)
        .map_err(|e| Error::Config(format!("sidecar serialization: {e}")))?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

//! Decision-path contribution decomposition.
//!
//! Walking a sample from root to leaf, each traversed split changes the
//! running node mean; that change is credited to the split's feature. The
//! credits telescope, so for every tree
//!
//! ```text
//! leaf mean = root mean + sum of per-feature contributions
//! ```
//!
//! and for the forest, prediction = baseline + sum(c_i) with baseline the
//! mean of root means. A feature that never appears on a sample's paths
//! contributes exactly 0.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::dataset::{Panel, SampleId};
use crate::error::{Error, Result};
use crate::forest::{predict_forest, validate_sample, ForestModel, TreeNode};

/// Per-sample additive decomposition of a forest prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionVector {
    pub sample_id: SampleId,
    /// Mean of the trees' root means; the prediction before any split.
    pub baseline: f64,
    /// One signed credit per metric, in model feature order.
    pub contributions: Vec<f64>,
    pub predicted: f64,
    /// Hash of the model that produced this vector.
    pub model_hash: String,
}

/// Contribution vectors for a sample set, sharing one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix {
    pub model_hash: String,
    pub feature_names: Vec<String>,
    pub rows: Vec<ContributionVector>,
}

/// Baseline and per-feature contributions of one tree for one sample.
pub fn tree_contributions(tree: &TreeNode, sample: &[f64], k: usize) -> Result<(f64, Vec<f64>)> {
    validate_sample(sample, k)?;
    let mut contributions = vec![0.0; k];
    let baseline = tree.mean();
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { .. } => return Ok((baseline, contributions)),
            TreeNode::Split {
                mean,
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let child: &TreeNode = if sample[*feature] <= *threshold {
                    left
                } else {
                    right
                };
                contributions[*feature] += child.mean() - mean;
                node = child;
            }
        }
    }
}

/// Forest-level decomposition: componentwise mean of the per-tree values,
/// in tree-index order.
pub fn forest_contributions(model: &ForestModel, sample: &[f64]) -> Result<ContributionVector> {
    forest_contributions_with_hash(model, sample, model.hash()?)
}

fn forest_contributions_with_hash(
    model: &ForestModel,
    sample: &[f64],
    model_hash: String,
) -> Result<ContributionVector> {
    let k = model.n_features();
    validate_sample(sample, k)?;
    let n_trees = model.trees.len() as f64;
    let mut baseline = 0.0;
    let mut contributions = vec![0.0; k];
    for tree in &model.trees {
        let (b, c) = tree_contributions(tree, sample, k)?;
        baseline += b;
        for (acc, v) in contributions.iter_mut().zip(&c) {
            *acc += v;
        }
    }
    baseline /= n_trees;
    for c in contributions.iter_mut() {
        *c /= n_trees;
    }
    Ok(ContributionVector {
        sample_id: SampleId::new("", 0),
        baseline,
        contributions,
        predicted: predict_forest(model, sample)?,
        model_hash,
    })
}

/// Decompose every row of a feature panel. Row order is preserved.
pub fn contribution_matrix(model: &ForestModel, features: &Panel) -> Result<ContributionMatrix> {
    if features.column_ids != model.feature_names {
        return Err(Error::ColumnMismatch(
            "panel columns differ from model features".into(),
        ));
    }
    if features.n_rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let model_hash = model.hash()?;
    let mut rows = Vec::with_capacity(features.n_rows());
    for r in 0..features.n_rows() {
        let mut cv = forest_contributions_with_hash(model, features.row(r), model_hash.clone())?;
        cv.sample_id = features.row_ids[r].clone();
        rows.push(cv);
    }
    Ok(ContributionMatrix {
        model_hash,
        feature_names: model.feature_names.clone(),
        rows,
    })
}

impl ContributionMatrix {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Row index of an exact (country, year) sample.
    pub fn find_row(&self, country: &str, year: i32) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r.sample_id.country == country && r.sample_id.year == year)
    }

    /// All row indices for a country, in matrix order.
    pub fn rows_for_country(&self, country: &str) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.sample_id.country == country)
            .map(|(i, _)| i)
            .collect()
    }

    /// Wide CSV export with the model hash in a leading comment line.
    /// Columns: country, year, baseline, one per metric, predicted.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# model_hash: {}", self.model_hash)?;
        let mut writer = csv::WriterBuilder::new().from_writer(&mut out);
        let mut header = vec!["country".to_string(), "year".to_string(), "baseline".into()];
        header.extend(self.feature_names.iter().cloned());
        header.push("predicted".into());
        writer.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![
                row.sample_id.country.clone(),
                row.sample_id.year.to_string(),
                format!("{}", row.baseline),
            ];
            record.extend(row.contributions.iter().map(|c| format!("{c}")));
            record.push(format!("{}", row.predicted));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse a CSV produced by [`ContributionMatrix::write_csv`].
    pub fn read_csv<R: BufRead>(mut input: R) -> Result<ContributionMatrix> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let model_hash = first
            .trim()
            .strip_prefix("# model_hash: ")
            .ok_or_else(|| Error::MalformedHeader("missing model_hash comment line".into()))?
            .to_string();

        let mut reader = csv::ReaderBuilder::new().from_reader(input);
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
        if headers.len() < 4
            || headers[0] != "country"
            || headers[1] != "year"
            || headers[2] != "baseline"
            || headers.last().map(String::as_str) != Some("predicted")
        {
            return Err(Error::MalformedHeader(
                "expected country,year,baseline,<metrics...>,predicted".into(),
            ));
        }
        let feature_names: Vec<String> = headers[3..headers.len() - 1].to_vec();
        let k = feature_names.len();

        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let parse = |i: usize| -> Result<f64> {
                field(i).parse::<f64>().map_err(|_| Error::MalformedRow {
                    row: line + 3,
                    reason: format!("bad number {:?}", field(i)),
                })
            };
            let year = field(1).parse::<i32>().map_err(|_| Error::MalformedRow {
                row: line + 3,
                reason: format!("bad year {:?}", field(1)),
            })?;
            let contributions: Result<Vec<f64>> = (0..k).map(|c| parse(3 + c)).collect();
            rows.push(ContributionVector {
                sample_id: SampleId::new(field(0), year),
                baseline: parse(2)?,
                contributions: contributions?,
                predicted: parse(3 + k)?,
                model_hash: model_hash.clone(),
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        Ok(ContributionMatrix {
            model_hash,
            feature_names,
            rows,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<ContributionMatrix> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

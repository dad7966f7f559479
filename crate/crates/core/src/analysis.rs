//! Comparison reports and run summaries.
//!
//! The central report ranks metrics by the absolute difference of their
//! contributions for a pair of samples (or componentwise group means), the
//! analysis behind "which metrics drive country A's score above country
//! B's".

use std::io::Write;

use serde::Serialize;

use crate::attribution::{ContributionMatrix, ContributionVector};
use crate::clustering::ClusterRun;
use crate::dataset::SupervisedMatrix;
use crate::error::{Error, Result};
use crate::forest::{evaluate, EvalMode, Evaluation, ForestModel};

/// One ranked metric difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonEntry {
    pub metric: String,
    pub c_a: f64,
    pub c_b: f64,
    /// c_a - c_b; positive means the metric pushed A's score up relative
    /// to B.
    pub diff: f64,
}

/// Largest-differing-contribution report for a pair of samples or groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub label_a: String,
    pub label_b: String,
    pub predicted_a: f64,
    pub predicted_b: f64,
    pub baseline: f64,
    pub top_n: usize,
    /// Sorted by |diff| descending, ties by metric id; only nonzero diffs.
    pub entries: Vec<ComparisonEntry>,
    pub model_hash: String,
}

/// Compare two contribution vectors metric by metric.
pub fn compare_pair(
    a: &ContributionVector,
    b: &ContributionVector,
    feature_names: &[String],
    top_n: usize,
) -> Result<ComparisonReport> {
    if a.model_hash != b.model_hash {
        return Err(Error::ModelHashMismatch {
            a: a.model_hash.clone(),
            b: b.model_hash.clone(),
        });
    }
    if top_n == 0 {
        return Err(Error::Config("top_n must be >= 1".into()));
    }
    let k = feature_names.len();
    if a.contributions.len() != k || b.contributions.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: a.contributions.len().min(b.contributions.len()),
        });
    }
    let mut entries: Vec<ComparisonEntry> = feature_names
        .iter()
        .enumerate()
        .filter_map(|(i, metric)| {
            let (c_a, c_b) = (a.contributions[i], b.contributions[i]);
            let diff = c_a - c_b;
            (diff.abs() > 0.0).then(|| ComparisonEntry {
                metric: metric.clone(),
                c_a,
                c_b,
                diff,
            })
        })
        .collect();
    entries.sort_by(|x, y| {
        y.diff
            .abs()
            .partial_cmp(&x.diff.abs())
            .unwrap()
            .then_with(|| x.metric.cmp(&y.metric))
    });
    entries.truncate(top_n);
    Ok(ComparisonReport {
        label_a: a.sample_id.to_string(),
        label_b: b.sample_id.to_string(),
        predicted_a: a.predicted,
        predicted_b: b.predicted,
        baseline: a.baseline,
        top_n,
        entries,
        model_hash: a.model_hash.clone(),
    })
}

/// Componentwise mean of a group's contribution vectors.
fn group_mean(matrix: &ContributionMatrix, rows: &[usize], label: &str) -> ContributionVector {
    let k = matrix.n_features();
    let n = rows.len() as f64;
    let mut contributions = vec![0.0; k];
    let mut baseline = 0.0;
    let mut predicted = 0.0;
    for &r in rows {
        let row = &matrix.rows[r];
        baseline += row.baseline;
        predicted += row.predicted;
        for (acc, v) in contributions.iter_mut().zip(&row.contributions) {
            *acc += v;
        }
    }
    for c in contributions.iter_mut() {
        *c /= n;
    }
    ContributionVector {
        sample_id: crate::dataset::SampleId::new(label, 0),
        baseline: baseline / n,
        contributions,
        predicted: predicted / n,
        model_hash: matrix.model_hash.clone(),
    }
}

/// Compare the componentwise means of two disjoint row groups.
pub fn compare_groups(
    matrix: &ContributionMatrix,
    group_a: &[usize],
    group_b: &[usize],
    label_a: &str,
    label_b: &str,
    top_n: usize,
) -> Result<ComparisonReport> {
    if group_a.is_empty() {
        return Err(Error::EmptyGroup(label_a.to_string()));
    }
    if group_b.is_empty() {
        return Err(Error::EmptyGroup(label_b.to_string()));
    }
    if let Some(&shared) = group_a.iter().find(|r| group_b.contains(r)) {
        return Err(Error::OverlappingGroups(shared));
    }
    let a = group_mean(matrix, group_a, label_a);
    let b = group_mean(matrix, group_b, label_b);
    let mut report = compare_pair(&a, &b, &matrix.feature_names, top_n)?;
    report.label_a = label_a.to_string();
    report.label_b = label_b.to_string();
    Ok(report)
}

/// Resolve a selector against the matrix rows.
///
/// `"KE"` selects every row of country KE (compared as the group mean);
/// `"KE:2010"` selects the single (KE, 2010) row.
pub fn resolve_selector(matrix: &ContributionMatrix, selector: &str) -> Result<Vec<usize>> {
    let rows = match selector.rsplit_once(':') {
        Some((country, year)) => match year.trim().parse::<i32>() {
            Ok(year) => matrix
                .find_row(country.trim(), year)
                .map(|r| vec![r])
                .unwrap_or_default(),
            Err(_) => matrix.rows_for_country(selector.trim()),
        },
        None => matrix.rows_for_country(selector.trim()),
    };
    if rows.is_empty() {
        return Err(Error::UnknownSelector(selector.to_string()));
    }
    Ok(rows)
}

/// Compare two selectors ("country" or "country:year").
pub fn compare_selectors(
    matrix: &ContributionMatrix,
    a: &str,
    b: &str,
    top_n: usize,
) -> Result<ComparisonReport> {
    let rows_a = resolve_selector(matrix, a)?;
    let rows_b = resolve_selector(matrix, b)?;
    compare_groups(matrix, &rows_a, &rows_b, a, b, top_n)
}

/// Nearest rows to a selector's mean vector by Euclidean distance in
/// contribution space; a convenience for finding comparison partners.
pub fn nearest_neighbors(
    matrix: &ContributionMatrix,
    selector: &str,
    count: usize,
) -> Result<Vec<(String, f64)>> {
    let rows = resolve_selector(matrix, selector)?;
    let anchor = group_mean(matrix, &rows, selector);
    let mut distances: Vec<(String, f64)> = matrix
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| !rows.contains(i))
        .map(|(_, row)| {
            let d2: f64 = row
                .contributions
                .iter()
                .zip(&anchor.contributions)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (row.sample_id.to_string(), d2.sqrt())
        })
        .collect();
    distances.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then_with(|| x.0.cmp(&y.0)));
    distances.truncate(count);
    Ok(distances)
}

impl ComparisonReport {
    /// Human-readable report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("comparison: {} vs {}\n", self.label_a, self.label_b));
        out.push_str(&format!("model hash: {}\n", self.model_hash));
        out.push_str(&format!("predicted {}: {}\n", self.label_a, self.predicted_a));
        out.push_str(&format!("predicted {}: {}\n", self.label_b, self.predicted_b));
        out.push_str(&format!("baseline: {}\n", self.baseline));
        out.push_str(&format!(
            "largest differing contributions (positive favors {}):\n",
            self.label_a
        ));
        if self.entries.is_empty() {
            out.push_str("  (none; contributions are identical)\n");
        }
        for e in &self.entries {
            out.push_str(&format!(
                "  {}: {:+.6} vs {:+.6} (diff {:+.6})\n",
                e.metric, e.c_a, e.c_b, e.diff
            ));
        }
        out
    }

    /// CSV with one row per ranked entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# model_hash: {}", self.model_hash)?;
        let mut writer = csv::WriterBuilder::new().from_writer(&mut out);
        writer.write_record(["metric", "c_a", "c_b", "diff"])?;
        for e in &self.entries {
            writer.write_record([
                e.metric.as_str(),
                &format!("{}", e.c_a),
                &format!("{}", e.c_b),
                &format!("{}", e.diff),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Plot-data CSV (metric, c_a, c_b) ordered by signed diff descending,
    /// ready for a diverging horizontal bar chart.
    pub fn write_plot_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# model_hash: {}", self.model_hash)?;
        let mut writer = csv::WriterBuilder::new().from_writer(&mut out);
        writer.write_record(["metric", "c_a", "c_b"])?;
        let mut ordered: Vec<&ComparisonEntry> = self.entries.iter().collect();
        ordered.sort_by(|x, y| {
            y.diff
                .partial_cmp(&x.diff)
                .unwrap()
                .then_with(|| x.metric.cmp(&y.metric))
        });
        for e in ordered {
            writer.write_record([
                e.metric.as_str(),
                &format!("{}", e.c_a),
                &format!("{}", e.c_b),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Reproducible one-page description of a training run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub model_hash: String,
    pub master_seed: u64,
    pub hyperparams: crate::forest::Hyperparams,
    pub n_rows: usize,
    pub n_features: usize,
    pub dropped_rows: usize,
    pub target_name: String,
    pub r2_in_sample: f64,
    pub oob: Option<Evaluation>,
    /// (cluster index, members), present when a clustering was supplied.
    pub clusters: Option<Vec<(usize, Vec<String>)>>,
}

/// Evaluate the model on its training data and collect run metadata.
pub fn summarize_run(
    model: &ForestModel,
    data: &SupervisedMatrix,
    clustering: Option<&ClusterRun>,
) -> Result<RunSummary> {
    let in_sample = evaluate(model, data, EvalMode::InSample)?;
    let oob = if model.hyperparams.bootstrap {
        Some(evaluate(model, data, EvalMode::Oob)?)
    } else {
        None
    };
    Ok(RunSummary {
        model_hash: model.hash()?,
        master_seed: model.master_seed,
        hyperparams: model.hyperparams.clone(),
        n_rows: data.features.n_rows(),
        n_features: data.features.n_cols(),
        dropped_rows: data.dropped_rows,
        target_name: data.target_name.clone(),
        r2_in_sample: in_sample.r2,
        oob,
        clusters: clustering.map(|run| {
            run.rosters()
                .into_iter()
                .enumerate()
                .collect()
        }),
    })
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model hash: {}\n", self.model_hash));
        out.push_str(&format!("seed: {}\n", self.master_seed));
        out.push_str(&format!(
            "data: {} rows x {} metrics (target {}, {} rows dropped)\n",
            self.n_rows, self.n_features, self.target_name, self.dropped_rows
        ));
        let hp = &self.hyperparams;
        out.push_str(&format!(
            "hyperparams: n_trees={} max_depth={} min_samples_leaf={} features_per_split={} bootstrap={}\n",
            hp.n_trees,
            hp.max_depth.map_or("unlimited".into(), |d| d.to_string()),
            hp.min_samples_leaf,
            hp.features_per_split
                .map_or("ceil(K/3)".into(), |f| f.to_string()),
            hp.bootstrap
        ));
        out.push_str(&format!("r2_in_sample: {:.6}\n", self.r2_in_sample));
        match &self.oob {
            Some(e) => out.push_str(&format!(
                "r2_oob: {:.6} (rows_used={}, rows_skipped={})\n",
                e.r2, e.rows_used, e.rows_skipped
            )),
            None => out.push_str("r2_oob: n/a (bootstrap disabled)\n"),
        }
        if let Some(clusters) = &self.clusters {
            for (j, members) in clusters {
                out.push_str(&format!("Cluster {j}: {}\n", members.join(", ")));
            }
        }
        out
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

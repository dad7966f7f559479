//! Python bindings: train a forest from CSVs, predict, decompose
//! predictions into per-metric contributions, cluster and compare.
//!
//! Build with `cargo build -p innodex-py`, rename the produced
//! `libinnodex_py.so` to `innodex_py.so` (or use maturin), then
//! `import innodex_py`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use innodex::analysis::{compare_selectors, nearest_neighbors};
use innodex::attribution::contribution_matrix;
use innodex::clustering::{cluster_contributions, ClusterOptions};
use innodex::dataset::{align_target, apply_scaler, fit_scaler, load_panel_path, Schema};
use innodex::forest::{evaluate, fit_forest, EvalMode, Hyperparams};
use innodex::synth::linear_fixture_with_missing;

fn to_py_err(err: innodex::Error) -> PyErr {
    match err {
        innodex::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A fitted random-forest model for innovation-score prediction.
#[pyclass]
struct ForestModel {
    inner: innodex::forest::ForestModel,
}

#[pymethods]
impl ForestModel {
    /// Train from wide CSVs with `country` and `year` key columns.
    #[staticmethod]
    #[pyo3(signature = (
        features_csv,
        targets_csv,
        target_column,
        seed,
        n_trees = 500,
        max_depth = None,
        min_samples_leaf = 5,
        features_per_split = None,
        bootstrap = true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        features_csv: PathBuf,
        targets_csv: PathBuf,
        target_column: &str,
        seed: u64,
        n_trees: usize,
        max_depth: Option<usize>,
        min_samples_leaf: usize,
        features_per_split: Option<usize>,
        bootstrap: bool,
    ) -> PyResult<Self> {
        let schema = Schema::default();
        let features = load_panel_path(&features_csv, &schema).map_err(to_py_err)?;
        let scaler = fit_scaler(&features).map_err(to_py_err)?;
        let scaled = apply_scaler(&features, &scaler).map_err(to_py_err)?;
        let targets = load_panel_path(&targets_csv, &schema).map_err(to_py_err)?;
        let data = align_target(&scaled, &targets, target_column).map_err(to_py_err)?;
        let hyperparams = Hyperparams {
            n_trees,
            max_depth,
            min_samples_leaf,
            features_per_split,
            bootstrap,
        };
        let inner = fit_forest(&data, &hyperparams, seed, scaler).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: innodex::forest::ForestModel::load(path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    fn hash(&self) -> PyResult<String> {
        self.inner.hash().map_err(to_py_err)
    }

    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    /// Predict the score for one standardized sample.
    fn predict(&self, sample: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&sample).map_err(to_py_err)
    }

    /// (baseline, contributions, predicted) for one standardized sample;
    /// predicted = baseline + sum(contributions).
    fn contributions(&self, sample: Vec<f64>) -> PyResult<(f64, Vec<f64>, f64)> {
        let cv = innodex::attribution::forest_contributions(&self.inner, &sample)
            .map_err(to_py_err)?;
        Ok((cv.baseline, cv.contributions, cv.predicted))
    }

    /// (r2, rows_used, rows_skipped) against a CSV pair; mode is
    /// "in_sample" or "oob".
    #[pyo3(signature = (features_csv, targets_csv, target_column, mode = "in_sample"))]
    fn evaluate(
        &self,
        features_csv: PathBuf,
        targets_csv: PathBuf,
        target_column: &str,
        mode: &str,
    ) -> PyResult<(f64, usize, usize)> {
        let mode = match mode {
            "in_sample" => EvalMode::InSample,
            "oob" => EvalMode::Oob,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        };
        let schema = Schema::default();
        let features = load_panel_path(&features_csv, &schema).map_err(to_py_err)?;
        let scaled = apply_scaler(&features, &self.inner.scaler).map_err(to_py_err)?;
        let targets = load_panel_path(&targets_csv, &schema).map_err(to_py_err)?;
        let data = align_target(&scaled, &targets, target_column).map_err(to_py_err)?;
        let result = evaluate(&self.inner, &data, mode).map_err(to_py_err)?;
        Ok((result.r2, result.rows_used, result.rows_skipped))
    }

    /// Decompose every row of a raw features CSV.
    fn contribution_matrix(&self, features_csv: PathBuf) -> PyResult<ContributionMatrix> {
        let features = load_panel_path(&features_csv, &Schema::default()).map_err(to_py_err)?;
        let scaled = apply_scaler(&features, &self.inner.scaler).map_err(to_py_err)?;
        Ok(ContributionMatrix {
            inner: contribution_matrix(&self.inner, &scaled).map_err(to_py_err)?,
        })
    }
}

/// Per-sample contribution vectors sharing one model.
#[pyclass]
struct ContributionMatrix {
    inner: innodex::attribution::ContributionMatrix,
}

#[pymethods]
impl ContributionMatrix {
    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: innodex::attribution::ContributionMatrix::load_csv(path).map_err(to_py_err)?,
        })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_csv(path).map_err(to_py_err)
    }

    fn model_hash(&self) -> String {
        self.inner.model_hash.clone()
    }

    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    /// Rows as (country, year, baseline, contributions, predicted).
    fn rows(&self) -> Vec<(String, i32, f64, Vec<f64>, f64)> {
        self.inner
            .rows
            .iter()
            .map(|r| {
                (
                    r.sample_id.country.clone(),
                    r.sample_id.year,
                    r.baseline,
                    r.contributions.clone(),
                    r.predicted,
                )
            })
            .collect()
    }

    /// Best-of-restarts k-means; returns (labels, assignments, inertia).
    #[pyo3(signature = (k, seed, restarts = 10, aggregate_years = true))]
    fn cluster(
        &self,
        k: usize,
        seed: u64,
        restarts: usize,
        aggregate_years: bool,
    ) -> PyResult<(Vec<String>, Vec<usize>, f64)> {
        let run = cluster_contributions(
            &self.inner,
            &ClusterOptions {
                k,
                seed,
                restarts,
                aggregate_years,
                ..ClusterOptions::default()
            },
        )
        .map_err(to_py_err)?;
        Ok((
            run.labels,
            run.clustering.assignments,
            run.clustering.inertia,
        ))
    }

    /// Compare two selectors ("COUNTRY" or "COUNTRY:YEAR"). Returns
    /// (label_a, label_b, predicted_a, predicted_b, baseline, entries) with
    /// entries as (metric, c_a, c_b, diff) ranked by |diff|.
    #[pyo3(signature = (a, b, top_n = 8))]
    #[allow(clippy::type_complexity)]
    fn compare(
        &self,
        a: &str,
        b: &str,
        top_n: usize,
    ) -> PyResult<(String, String, f64, f64, f64, Vec<(String, f64, f64, f64)>)> {
        let report = compare_selectors(&self.inner, a, b, top_n).map_err(to_py_err)?;
        Ok((
            report.label_a,
            report.label_b,
            report.predicted_a,
            report.predicted_b,
            report.baseline,
            report
                .entries
                .into_iter()
                .map(|e| (e.metric, e.c_a, e.c_b, e.diff))
                .collect(),
        ))
    }

    /// Nearest rows to a selector in contribution space, as
    /// (label, distance) pairs.
    #[pyo3(signature = (selector, count = 5))]
    fn nearest(&self, selector: &str, count: usize) -> PyResult<Vec<(String, f64)>> {
        nearest_neighbors(&self.inner, selector, count).map_err(to_py_err)
    }
}

/// Write a synthetic features/targets CSV pair and return their paths.
#[pyfunction]
#[pyo3(signature = (dir, rows = 100, metrics = 8, noise = 0.1, missing = 0.1, seed = 42))]
fn synth_fixture(
    dir: PathBuf,
    rows: usize,
    metrics: usize,
    noise: f64,
    missing: f64,
    seed: u64,
) -> PyResult<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(&dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let fixture = linear_fixture_with_missing(rows, metrics, noise, missing, seed);
    let features_path = dir.join("features.csv");
    let targets_path = dir.join("targets.csv");
    let write = |panel, path: &PathBuf| -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        innodex::dataset::write_panel_csv(panel, std::io::BufWriter::new(file))
            .map_err(to_py_err)
    };
    write(&fixture.features, &features_path)?;
    write(&fixture.targets, &targets_path)?;
    Ok((features_path, targets_path))
}

#[pymodule]
fn innodex_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ForestModel>()?;
    m.add_class::<ContributionMatrix>()?;
    m.add_function(wrap_pyfunction!(synth_fixture, m)?)?;
    Ok(())
}

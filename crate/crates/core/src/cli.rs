//! Run configuration and the command implementations behind the binary.
//!
//! Commands are thin, deterministic wrappers over the library: identical
//! config and inputs produce byte-identical output directories. Every
//! command writes a manifest listing its inputs, seed and model hash along
//! with the SHA-256 of each artifact.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{compare_selectors, nearest_neighbors, summarize_run};
use crate::attribution::{contribution_matrix, ContributionMatrix};
use crate::clustering::{cluster_contributions, ClusterOptions};
use crate::dataset::{
    align_target, apply_scaler, fit_scaler, load_panel_path, write_panel_csv, write_panel_sidecar,
    Panel, PanelSidecar, Schema, SupervisedMatrix,
};
use crate::error::{Error, Result};
use crate::forest::{evaluate, fit_forest, EvalMode, ForestModel, Hyperparams};
use crate::synth::linear_fixture_with_missing;

/// Environment variable consulted when no output directory is configured.
pub const OUTPUT_DIR_ENV: &str = "INNODEX_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub features: PathBuf,
    pub targets: PathBuf,
    pub model: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/contributions.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contributions: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub column: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub aggregate_years: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let o = ClusterOptions::default();
        Self {
            k: o.k,
            restarts: o.restarts,
            max_iter: o.max_iter,
            tol: o.tol,
            aggregate_years: o.aggregate_years,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    /// Pairs of selectors, each "COUNTRY" or "COUNTRY:YEAR".
    pub pairs: Vec<[String; 2]>,
    pub top_n: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            top_n: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub modes: Vec<EvalMode>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            modes: vec![EvalMode::InSample, EvalMode::Oob],
        }
    }
}

/// Full run configuration. The seed is required; there is no wall-clock
/// fallback.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub schema: Schema,
    pub target: TargetConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate_basics()?;
        Ok(config)
    }

    fn validate_basics(&self) -> Result<()> {
        if self.clustering.k == 0 {
            return Err(Error::Config("clustering.k must be >= 1".into()));
        }
        if self.clustering.restarts == 0 {
            return Err(Error::Config("clustering.restarts must be >= 1".into()));
        }
        if self.comparison.top_n == 0 {
            return Err(Error::Config("comparison.top_n must be >= 1".into()));
        }
        Ok(())
    }

    /// Output directory: config, then the environment default.
    pub fn output_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.paths.output_dir {
            return Ok(dir.clone());
        }
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                return Ok(PathBuf::from(dir));
            }
        }
        Err(Error::Config(format!(
            "no output directory: set paths.output_dir or {OUTPUT_DIR_ENV}"
        )))
    }

    pub fn contributions_path(&self) -> Result<PathBuf> {
        match &self.paths.contributions {
            Some(p) => Ok(p.clone()),
            None => Ok(self.output_dir()?.join("contributions.csv")),
        }
    }

    fn require_file(&self, path: &Path, role: &str) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Config(format!(
                "{role} file {} does not exist",
                path.display()
            )));
        }
        Ok(())
    }

    fn cluster_options(&self) -> ClusterOptions {
        ClusterOptions {
            k: self.clustering.k,
            seed: self.seed,
            restarts: self.clustering.restarts,
            max_iter: self.clustering.max_iter,
            tol: self.clustering.tol,
            aggregate_years: self.clustering.aggregate_years,
        }
    }
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    format: &'static str,
    version: u32,
    command: &'static str,
    seed: u64,
    model_hash: Option<String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn digest_of(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

fn write_manifest(
    out_dir: &Path,
    command: &'static str,
    seed: u64,
    model_hash: Option<String>,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    let manifest = Manifest {
        format: "innodex-manifest",
        version: 1,
        command,
        seed,
        model_hash,
        inputs: inputs
            .iter()
            .map(|p| digest_of(p))
            .collect::<Result<_>>()?,
        outputs: outputs
            .iter()
            .map(|p| digest_of(p))
            .collect::<Result<_>>()?,
    };
    let path = out_dir.join(format!("{command}_manifest.json"));
    let mut file = std::fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn load_features(config: &RunConfig) -> Result<Panel> {
    config.require_file(&config.paths.features, "features")?;
    load_panel_path(&config.paths.features, &config.schema)
}

/// Targets are always a wide table sharing the schema's key columns.
fn load_targets(config: &RunConfig) -> Result<Panel> {
    config.require_file(&config.paths.targets, "targets")?;
    let schema = Schema {
        layout: crate::dataset::Layout::Wide,
        ..config.schema.clone()
    };
    load_panel_path(&config.paths.targets, &schema)
}

fn standardized_training_data(
    config: &RunConfig,
    model: &ForestModel,
) -> Result<SupervisedMatrix> {
    let features = load_features(config)?;
    let scaled = apply_scaler(&features, &model.scaler)?;
    let targets = load_targets(config)?;
    align_target(&scaled, &targets, &config.target.column)
}

/// Fit scaler and forest, persist the model, and report R-squared.
pub fn run_train(config: &RunConfig, emit_standardized: bool, out: &mut dyn Write) -> Result<()> {
    let out_dir = config.output_dir()?;
    ensure_dir(&out_dir)?;

    let features = load_features(config)?;
    let scaler = fit_scaler(&features)?;
    let scaled = apply_scaler(&features, &scaler)?;
    let targets = load_targets(config)?;
    let data = align_target(&scaled, &targets, &config.target.column)?;

    let model = fit_forest(&data, &config.hyperparams, config.seed, scaler.clone())?;
    if let Some(parent) = config.paths.model.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    model.save(&config.paths.model)?;

    let summary = summarize_run(&model, &data, None)?;
    let summary_txt = out_dir.join("run_summary.txt");
    let summary_json = out_dir.join("run_summary.json");
    write_text(&summary_txt, &summary.to_text())?;
    write_text(&summary_json, &(summary.to_json_pretty()? + "\n"))?;

    let mut outputs = vec![config.paths.model.clone(), summary_txt, summary_json];
    if emit_standardized {
        let csv_path = out_dir.join("standardized_features.csv");
        let sidecar_path = out_dir.join("features_meta.toml");
        let file = std::fs::File::create(&csv_path)?;
        write_panel_csv(&data.features, std::io::BufWriter::new(file))?;
        let sidecar = PanelSidecar {
            country_column: config.schema.country_column.clone(),
            year_column: config.schema.year_column.clone(),
            metric_columns: data.features.column_ids.clone(),
            scaler: Some(scaler),
        };
        let file = std::fs::File::create(&sidecar_path)?;
        write_panel_sidecar(&sidecar, std::io::BufWriter::new(file))?;
        outputs.push(csv_path);
        outputs.push(sidecar_path);
    }

    writeln!(
        out,
        "rows={} metrics={} dropped={}",
        summary.n_rows, summary.n_features, summary.dropped_rows
    )?;
    writeln!(out, "model_file={}", config.paths.model.display())?;
    writeln!(out, "model_hash={}", summary.model_hash)?;
    writeln!(out, "r2_in_sample={:.6}", summary.r2_in_sample)?;
    match &summary.oob {
        Some(e) => writeln!(
            out,
            "r2_oob={:.6} rows_used={} rows_skipped={}",
            e.r2, e.rows_used, e.rows_skipped
        )?,
        None => writeln!(out, "r2_oob=n/a")?,
    }

    write_manifest(
        &out_dir,
        "train",
        config.seed,
        Some(summary.model_hash),
        &[config.paths.features.clone(), config.paths.targets.clone()],
        &outputs,
    )
}

/// Report R-squared for the configured evaluation modes.
pub fn run_evaluate(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let out_dir = config.output_dir()?;
    ensure_dir(&out_dir)?;
    config.require_file(&config.paths.model, "model")?;
    let model = ForestModel::load(&config.paths.model)?;
    let data = standardized_training_data(config, &model)?;

    let mut lines = format!("model hash: {}\n", model.hash()?);
    for mode in &config.evaluation.modes {
        let name = match mode {
            EvalMode::InSample => "in_sample",
            EvalMode::Oob => "oob",
        };
        let result = evaluate(&model, &data, *mode)?;
        lines.push_str(&format!(
            "r2_{name}={:.6} rows_used={} rows_skipped={}\n",
            result.r2, result.rows_used, result.rows_skipped
        ));
    }
    out.write_all(lines.as_bytes())?;
    let report = out_dir.join("evaluation.txt");
    write_text(&report, &lines)?;

    write_manifest(
        &out_dir,
        "evaluate",
        config.seed,
        Some(model.hash()?),
        &[
            config.paths.model.clone(),
            config.paths.features.clone(),
            config.paths.targets.clone(),
        ],
        &[report],
    )
}

/// Decompose every feature row into per-metric contributions.
pub fn run_contribute(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let out_dir = config.output_dir()?;
    ensure_dir(&out_dir)?;
    config.require_file(&config.paths.model, "model")?;
    let model = ForestModel::load(&config.paths.model)?;
    let features = load_features(config)?;
    let scaled = apply_scaler(&features, &model.scaler)?;
    let matrix = contribution_matrix(&model, &scaled)?;

    let path = config.contributions_path()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    matrix.save_csv(&path)?;
    writeln!(out, "contributions={}", path.display())?;
    writeln!(out, "rows={} metrics={}", matrix.rows.len(), matrix.n_features())?;
    writeln!(out, "model_hash={}", matrix.model_hash)?;

    write_manifest(
        &out_dir,
        "contribute",
        config.seed,
        Some(matrix.model_hash.clone()),
        &[config.paths.model.clone(), config.paths.features.clone()],
        &[path],
    )
}

/// k-means over contribution vectors; writes assignments and rosters.
pub fn run_cluster(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let out_dir = config.output_dir()?;
    ensure_dir(&out_dir)?;
    let contributions = config.contributions_path()?;
    config.require_file(&contributions, "contributions")?;
    let matrix = ContributionMatrix::load_csv(&contributions)?;
    let run = cluster_contributions(&matrix, &config.cluster_options())?;

    let assignments_path = out_dir.join("assignments.csv");
    let file = std::fs::File::create(&assignments_path)?;
    run.write_assignments_csv(&matrix.model_hash, std::io::BufWriter::new(file))?;
    let roster_path = out_dir.join("cluster_rosters.txt");
    let roster = run.roster_text(&matrix.model_hash);
    write_text(&roster_path, &roster)?;

    writeln!(out, "k={} inertia={}", run.k(), run.clustering.inertia)?;
    out.write_all(roster.as_bytes())?;

    write_manifest(
        &out_dir,
        "cluster",
        config.seed,
        Some(matrix.model_hash.clone()),
        &[contributions],
        &[assignments_path, roster_path],
    )
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Pairwise largest-differing-contribution reports.
pub fn run_compare(
    config: &RunConfig,
    suggest: Option<&str>,
    out: &mut dyn Write,
) -> Result<()> {
    let out_dir = config.output_dir()?;
    ensure_dir(&out_dir)?;
    let contributions = config.contributions_path()?;
    config.require_file(&contributions, "contributions")?;
    let matrix = ContributionMatrix::load_csv(&contributions)?;

    if let Some(selector) = suggest {
        let neighbors = nearest_neighbors(&matrix, selector, 5)?;
        writeln!(
            out,
            "nearest neighbors of {selector} in contribution space (a convenience, not a recommendation):"
        )?;
        for (label, dist) in neighbors {
            writeln!(out, "  {label} distance={dist:.6}")?;
        }
    }

    if config.comparison.pairs.is_empty() && suggest.is_none() {
        return Err(Error::Config("comparison.pairs is empty".into()));
    }

    let mut outputs = Vec::new();
    for [a, b] in &config.comparison.pairs {
        let report = compare_selectors(&matrix, a, b, config.comparison.top_n)?;
        let stem = format!("compare_{}_vs_{}", sanitize(a), sanitize(b));
        let txt = out_dir.join(format!("{stem}.txt"));
        let csv = out_dir.join(format!("{stem}.csv"));
        let plot = out_dir.join(format!("{stem}_plot.csv"));
        write_text(&txt, &report.to_text())?;
        let file = std::fs::File::create(&csv)?;
        report.write_csv(std::io::BufWriter::new(file))?;
        let file = std::fs::File::create(&plot)?;
        report.write_plot_csv(std::io::BufWriter::new(file))?;
        out.write_all(report.to_text().as_bytes())?;
        outputs.extend([txt, csv, plot]);
    }

    write_manifest(
        &out_dir,
        "compare",
        config.seed,
        Some(matrix.model_hash.clone()),
        &[contributions],
        &outputs,
    )
}

/// Options for the synthetic fixture generator.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub output_dir: PathBuf,
    pub rows: usize,
    pub metrics: usize,
    pub noise: f64,
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("."),
            rows: 200,
            metrics: 10,
            noise: 0.1,
            missing_fraction: 0.1,
            seed: 42,
        }
    }
}

/// Generate a synthetic fixture: features.csv, targets.csv and a ready-made
/// config.toml, so the pipeline can run without proprietary data.
pub fn run_synth(opts: &SynthOptions, out: &mut dyn Write) -> Result<()> {
    ensure_dir(&opts.output_dir)?;
    let fixture = linear_fixture_with_missing(
        opts.rows,
        opts.metrics,
        opts.noise,
        opts.missing_fraction,
        opts.seed,
    );
    let features_path = opts.output_dir.join("features.csv");
    let targets_path = opts.output_dir.join("targets.csv");
    let config_path = opts.output_dir.join("config.toml");

    let file = std::fs::File::create(&features_path)?;
    write_panel_csv(&fixture.features, std::io::BufWriter::new(file))?;
    let file = std::fs::File::create(&targets_path)?;
    write_panel_csv(&fixture.targets, std::io::BufWriter::new(file))?;

    let config = RunConfig {
        seed: opts.seed,
        paths: PathsConfig {
            features: features_path.clone(),
            targets: targets_path.clone(),
            model: opts.output_dir.join("out").join("model.json"),
            output_dir: Some(opts.output_dir.join("out")),
            contributions: None,
        },
        schema: Schema::default(),
        target: TargetConfig {
            column: "score".into(),
        },
        hyperparams: Hyperparams {
            n_trees: 60,
            ..Hyperparams::default()
        },
        clustering: ClusteringConfig {
            k: 3,
            ..ClusteringConfig::default()
        },
        comparison: ComparisonConfig {
            pairs: vec![["C000".into(), "C001".into()]],
            top_n: 8,
        },
        evaluation: EvaluationConfig::default(),
    };
    let text = toml::to_string_pretty(&config)
        .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    write_text(&config_path, &text)?;

    writeln!(out, "features={}", features_path.display())?;
    writeln!(out, "targets={}", targets_path.display())?;
    writeln!(out, "config={}", config_path.display())?;

    write_manifest(
        &opts.output_dir,
        "synth",
        opts.seed,
        None,
        &[],
        &[features_path, targets_path, config_path],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[paths]
features = "f.csv"
targets = "t.csv"
model = "m.json"

[target]
column = "score"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.hyperparams.n_trees, 500);
        assert_eq!(config.clustering.k, 20);
        assert_eq!(config.comparison.top_n, 8);
        assert_eq!(config.schema.country_column, "country");
        assert_eq!(
            config.evaluation.modes,
            vec![EvalMode::InSample, EvalMode::Oob]
        );
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = MINIMAL.replace("seed = 7", "");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[typo_section]\nx = 1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn output_dir_falls_back_to_env() {
        let config: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert!(config.paths.output_dir.is_none());
        // Without config or env the lookup is a config error.
        if std::env::var(OUTPUT_DIR_ENV).is_err() {
            assert!(matches!(config.output_dir(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config: RunConfig = toml::from_str(MINIMAL).unwrap();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.paths.features, config.paths.features);
    }
}

//! Deterministic synthetic fixtures for tests and the `synth` subcommand.
//!
//! Nothing here depends on proprietary data: linear panels exercise the
//! regression pipeline and Gaussian blobs exercise clustering.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{align_target, Panel, SampleId, SupervisedMatrix};
use crate::seeding::{derive, rng_for, stream};

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A linear ground-truth panel: y = w . x + noise.
#[derive(Debug, Clone)]
pub struct LinearFixture {
    pub features: Panel,
    pub targets: Panel,
    pub weights: Vec<f64>,
}

impl LinearFixture {
    pub fn supervised(&self) -> SupervisedMatrix {
        align_target(&self.features, &self.targets, "score").expect("fixture panels align")
    }
}

/// Generate `n` samples with `k` correlated metrics and a linear target with
/// noise sigma = `noise_ratio` times the signal's population std.
pub fn linear_fixture(n: usize, k: usize, noise_ratio: f64, seed: u64) -> LinearFixture {
    linear_fixture_with_missing(n, k, noise_ratio, 0.0, seed)
}

/// Same as [`linear_fixture`] with a fraction of feature cells masked as
/// missing (the target stays fully observed).
///
/// Metrics load on one latent factor plus idiosyncratic noise, mimicking how
/// development indicators co-move with a country's overall level, and the
/// target weights decay geometrically.
pub fn linear_fixture_with_missing(
    n: usize,
    k: usize,
    noise_ratio: f64,
    missing_fraction: f64,
    seed: u64,
) -> LinearFixture {
    let mut feat_rng = rng_for(derive(seed, stream::SYNTH_FEATURES));
    let mut weight_rng = rng_for(derive(seed, stream::SYNTH_WEIGHTS));
    let mut noise_rng = rng_for(derive(seed, stream::SYNTH_NOISE));
    let mut missing_rng = rng_for(derive(seed, stream::SYNTH_MISSING));

    let row_ids: Vec<SampleId> = (0..n)
        .map(|i| SampleId::new(format!("C{i:03}"), 2010))
        .collect();
    let column_ids: Vec<String> = (0..k).map(|c| format!("m{c:02}")).collect();

    let loadings: Vec<f64> = (0..k).map(|_| feat_rng.random_range(0.5..1.5)).collect();
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n {
        let factor = standard_normal(&mut feat_rng);
        for load in &loadings {
            values.push(load * factor + 0.7 * standard_normal(&mut feat_rng));
        }
    }
    let weights: Vec<f64> = (0..k)
        .map(|j| weight_rng.random_range(0.5..1.5) * 0.6f64.powi(j as i32))
        .collect();

    let signals: Vec<f64> = (0..n)
        .map(|r| {
            (0..k)
                .map(|c| weights[c] * values[r * k + c])
                .sum::<f64>()
        })
        .collect();
    let mean = signals.iter().sum::<f64>() / n as f64;
    let var = signals.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    let noise_sigma = noise_ratio * var.sqrt();
    let scores: Vec<f64> = signals
        .iter()
        .map(|s| s + noise_sigma * standard_normal(&mut noise_rng))
        .collect();

    let missing: Vec<bool> = (0..n * k)
        .map(|_| missing_rng.random::<f64>() < missing_fraction)
        .collect();

    let features = Panel::new(row_ids.clone(), column_ids, values, missing).expect("valid panel");
    let targets = Panel::new(
        row_ids,
        vec!["score".into()],
        scores,
        vec![false; n],
    )
    .expect("valid panel");
    LinearFixture {
        features,
        targets,
        weights,
    }
}

/// Isotropic Gaussian blobs with centers `separation * sigma` apart along
/// the first axis. Returns points and their generating blob labels.
pub fn blobs(
    n_per_blob: usize,
    n_blobs: usize,
    dim: usize,
    sigma: f64,
    separation: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng_for(derive(seed, stream::SYNTH_FEATURES));
    let mut points = Vec::with_capacity(n_per_blob * n_blobs);
    let mut labels = Vec::with_capacity(n_per_blob * n_blobs);
    for blob in 0..n_blobs {
        let center = blob as f64 * separation * sigma;
        for _ in 0..n_per_blob {
            let mut p = Vec::with_capacity(dim);
            p.push(center + sigma * standard_normal(&mut rng));
            for _ in 1..dim {
                p.push(sigma * standard_normal(&mut rng));
            }
            points.push(p);
            labels.push(blob);
        }
    }
    (points, labels)
}

/// Random panel with per-column shift and scale, for standardization tests.
pub fn random_panel(rows: usize, cols: usize, missing_fraction: f64, seed: u64) -> Panel {
    let mut rng = rng_for(derive(seed, stream::SYNTH_FEATURES));
    let mut missing_rng = rng_for(derive(seed, stream::SYNTH_MISSING));
    let shifts: Vec<f64> = (0..cols).map(|_| rng.random_range(-10.0..10.0)).collect();
    let scales: Vec<f64> = (0..cols).map(|_| rng.random_range(0.5..5.0)).collect();
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        for c in 0..cols {
            values.push(shifts[c] + scales[c] * standard_normal(&mut rng));
        }
    }
    let missing: Vec<bool> = (0..rows * cols)
        .map(|_| missing_rng.random::<f64>() < missing_fraction)
        .collect();
    let row_ids = (0..rows)
        .map(|i| SampleId::new(format!("C{i:03}"), 2010))
        .collect();
    let column_ids = (0..cols).map(|c| format!("m{c:02}")).collect();
    Panel::new(row_ids, column_ids, values, missing).expect("valid panel")
}

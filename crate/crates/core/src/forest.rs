//! CART regression trees and bagged random forests.
//!
//! Trees split greedily by variance reduction. Every node stores the mean of
//! the training targets that reached it; the attribution module differences
//! these means along decision paths. All randomness is pre-derived per tree
//! and node from the master seed, so training is bit-reproducible under any
//! parallelism.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Panel, ScalerParams, SupervisedMatrix};
use crate::error::{Error, Result};
use crate::seeding::{derive, derive2, rng_for, stream};

/// Node of a fitted regression tree.
///
/// Routing rule: feature value <= threshold goes left, else right. A split
/// node's mean equals the sample-count-weighted mean of its children's
/// means.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        mean: f64,
        samples: usize,
    },
    Split {
        mean: f64,
        samples: usize,
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn mean(&self) -> f64 {
        match self {
            TreeNode::Leaf { mean, .. } | TreeNode::Split { mean, .. } => *mean,
        }
    }

    pub fn samples(&self) -> usize {
        match self {
            TreeNode::Leaf { samples, .. } | TreeNode::Split { samples, .. } => *samples,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Number of nodes in the subtree.
    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }
}

/// Forest hyperparameters. `None` means unlimited depth / the ceil(K/3)
/// feature-subsampling default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

impl Hyperparams {
    /// Features drawn per split for a K-column panel.
    pub fn resolved_features_per_split(&self, k: usize) -> usize {
        self.features_per_split.unwrap_or(k.div_ceil(3).max(1))
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidHyperparams("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidHyperparams(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        let fps = self.resolved_features_per_split(k);
        if fps == 0 || fps > k {
            return Err(Error::InvalidHyperparams(format!(
                "features_per_split {fps} out of range [1, {k}]"
            )));
        }
        Ok(())
    }
}

/// A fitted forest plus everything needed to reproduce and reuse it.
#[derive(Debug, Clone)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub hyperparams: Hyperparams,
    pub master_seed: u64,
    /// Per tree, the sorted row indices not drawn by its bootstrap.
    pub oob_indices: Vec<Vec<usize>>,
    pub feature_names: Vec<String>,
    pub scaler: ScalerParams,
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct SplitChoice {
    score: f64,
    feature: usize,
    threshold: f64,
}

struct TreeBuilder<'a> {
    features: &'a Panel,
    target: &'a [f64],
    max_depth: usize,
    min_samples_leaf: usize,
    features_per_split: usize,
    tree_seed: u64,
    next_node: u64,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let node_id = self.next_node;
        self.next_node += 1;

        let n = rows.len();
        let mean = rows.iter().map(|&r| self.target[r]).sum::<f64>() / n as f64;
        let leaf = |mean| TreeNode::Leaf { mean, samples: n };

        if depth >= self.max_depth || n < 2 * self.min_samples_leaf || self.target_constant(&rows)
        {
            return leaf(mean);
        }

        let mut rng = rng_for(derive2(self.tree_seed, stream::NODE, node_id));
        let k = self.features.n_cols();
        let mut candidates = sample_distinct(&mut rng, k, self.features_per_split);
        candidates.sort_unstable();

        let Some(choice) = self.best_split(&rows, &candidates) else {
            return leaf(mean);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.features.value(r, choice.feature) <= choice.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        TreeNode::Split {
            mean,
            samples: n,
            feature: choice.feature,
            threshold: choice.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn target_constant(&self, rows: &[usize]) -> bool {
        let first = self.target[rows[0]];
        rows.iter().all(|&r| self.target[r] == first)
    }

    /// Minimize the summed child SSE over candidate features and midpoint
    /// thresholds. Ties break toward the lower feature index, then the lower
    /// threshold.
    fn best_split(&self, rows: &[usize], candidates: &[usize]) -> Option<SplitChoice> {
        let n = rows.len();
        let msl = self.min_samples_leaf;
        let mut best: Option<SplitChoice> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);

        for &f in candidates {
            pairs.clear();
            pairs.extend(
                rows.iter()
                    .map(|&r| (self.features.value(r, f), self.target[r])),
            );
            pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let total_y: f64 = pairs.iter().map(|p| p.1).sum();
            let total_y2: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
            let mut left_y = 0.0;
            let mut left_y2 = 0.0;

            for i in 0..n - 1 {
                left_y += pairs[i].1;
                left_y2 += pairs[i].1 * pairs[i].1;
                if pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < msl || n_right < msl {
                    continue;
                }
                let threshold = pairs[i].0 + (pairs[i + 1].0 - pairs[i].0) / 2.0;
                // The routed partition must equal the scored one: everything
                // <= threshold is exactly the left block.
                if threshold >= pairs[i + 1].0 {
                    continue;
                }
                let sse_left = left_y2 - left_y * left_y / n_left as f64;
                let right_y = total_y - left_y;
                let right_y2 = total_y2 - left_y2;
                let sse_right = right_y2 - right_y * right_y / n_right as f64;
                let score = sse_left + sse_right;

                let better = match &best {
                    None => true,
                    Some(b) => {
                        score < b.score
                            || (score == b.score
                                && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(SplitChoice {
                        score,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

/// Partial Fisher-Yates draw of `k` distinct values from 0..n.
fn sample_distinct(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

fn validate_training_data(data: &SupervisedMatrix) -> Result<()> {
    let panel = &data.features;
    if panel.n_rows() == 0 {
        return Err(Error::EmptyPanel);
    }
    for r in 0..panel.n_rows() {
        for (c, v) in panel.row(r).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature { index: c });
            }
        }
        if !data.target[r].is_finite() {
            return Err(Error::NonFiniteTarget(r));
        }
    }
    Ok(())
}

/// Fit a single CART regression tree on the given row subset.
///
/// The subset may contain repeated indices (bootstrap draws); repeats weight
/// rows by multiplicity.
pub fn fit_tree(
    data: &SupervisedMatrix,
    row_subset: &[usize],
    hyperparams: &Hyperparams,
    rng_seed: u64,
) -> Result<TreeNode> {
    if row_subset.is_empty() {
        return Err(Error::EmptyRowSubset);
    }
    let k = data.features.n_cols();
    hyperparams.validate(k)?;
    let mut builder = TreeBuilder {
        features: &data.features,
        target: &data.target,
        max_depth: hyperparams.max_depth.unwrap_or(usize::MAX),
        min_samples_leaf: hyperparams.min_samples_leaf,
        features_per_split: hyperparams.resolved_features_per_split(k),
        tree_seed: rng_seed,
        next_node: 0,
    };
    Ok(builder.build(row_subset.to_vec(), 0))
}

/// Fit a bagged forest. Results are bit-identical for a fixed master seed
/// regardless of thread count.
pub fn fit_forest(
    data: &SupervisedMatrix,
    hyperparams: &Hyperparams,
    master_seed: u64,
    scaler: ScalerParams,
) -> Result<ForestModel> {
    validate_training_data(data)?;
    hyperparams.validate(data.features.n_cols())?;
    let n = data.features.n_rows();

    let fitted: Result<Vec<(TreeNode, Vec<usize>)>> = (0..hyperparams.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = derive(master_seed, t as u64);
            let (subset, oob) = if hyperparams.bootstrap {
                let mut rng = rng_for(derive(tree_seed, stream::BOOTSTRAP));
                let subset: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let drawn: HashSet<usize> = subset.iter().copied().collect();
                let oob: Vec<usize> = (0..n).filter(|i| !drawn.contains(i)).collect();
                (subset, oob)
            } else {
                ((0..n).collect(), Vec::new())
            };
            let tree = fit_tree(data, &subset, hyperparams, tree_seed)?;
            Ok((tree, oob))
        })
        .collect();

    let (trees, oob_indices) = fitted?.into_iter().unzip();
    Ok(ForestModel {
        trees,
        hyperparams: hyperparams.clone(),
        master_seed,
        oob_indices,
        feature_names: data.features.column_ids.clone(),
        scaler,
    })
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

pub(crate) fn validate_sample(sample: &[f64], expected: usize) -> Result<()> {
    if sample.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: sample.len(),
        });
    }
    if let Some(index) = sample.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature { index });
    }
    Ok(())
}

pub(crate) fn walk_to_leaf(tree: &TreeNode, sample: &[f64]) -> f64 {
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { mean, .. } => return *mean,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                node = if sample[*feature] <= *threshold {
                    left
                } else {
                    right
                };
            }
        }
    }
}

fn max_feature_index(tree: &TreeNode) -> Option<usize> {
    match tree {
        TreeNode::Leaf { .. } => None,
        TreeNode::Split {
            feature,
            left,
            right,
            ..
        } => {
            let child = max_feature_index(left).max(max_feature_index(right));
            Some(child.map_or(*feature, |c| c.max(*feature)))
        }
    }
}

/// Route a sample to a leaf and return the leaf mean.
pub fn predict_tree(tree: &TreeNode, sample: &[f64]) -> Result<f64> {
    let needed = max_feature_index(tree).map_or(0, |f| f + 1);
    if sample.len() < needed {
        return Err(Error::DimensionMismatch {
            expected: needed,
            got: sample.len(),
        });
    }
    if let Some(index) = sample.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature { index });
    }
    Ok(walk_to_leaf(tree, sample))
}

/// Arithmetic mean of the per-tree predictions, in tree-index order.
pub fn predict_forest(model: &ForestModel, sample: &[f64]) -> Result<f64> {
    validate_sample(sample, model.feature_names.len())?;
    let sum: f64 = model.trees.iter().map(|t| walk_to_leaf(t, sample)).sum();
    Ok(sum / model.trees.len() as f64)
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, sample: &[f64]) -> Result<f64> {
        predict_forest(self, sample)
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Coefficient of determination, 1 - SS_res / SS_tot.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantTarget);
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    InSample,
    Oob,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub r2: f64,
    pub rows_used: usize,
    pub rows_skipped: usize,
}

/// R-squared of the model against the data's target.
///
/// In-sample mode predicts every row with the full forest. OOB mode predicts
/// each row with only the trees whose bootstrap excluded it; rows with no
/// out-of-bag tree are skipped and counted.
pub fn evaluate(model: &ForestModel, data: &SupervisedMatrix, mode: EvalMode) -> Result<Evaluation> {
    if data.features.column_ids != model.feature_names {
        return Err(Error::ColumnMismatch(
            "evaluation panel columns differ from model features".into(),
        ));
    }
    let n = data.features.n_rows();
    match mode {
        EvalMode::InSample => {
            let preds: Result<Vec<f64>> = (0..n)
                .map(|r| predict_forest(model, data.features.row(r)))
                .collect();
            Ok(Evaluation {
                r2: r_squared(&data.target, &preds?)?,
                rows_used: n,
                rows_skipped: 0,
            })
        }
        EvalMode::Oob => {
            if !model.hyperparams.bootstrap {
                return Err(Error::OobUnavailable);
            }
            if model
                .oob_indices
                .iter()
                .flatten()
                .any(|&i| i >= n)
            {
                return Err(Error::ColumnMismatch(
                    "out-of-bag indices refer to rows beyond this panel; \
                     oob mode requires the training panel"
                        .into(),
                ));
            }
            let mut trees_for_row: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (t, oob) in model.oob_indices.iter().enumerate() {
                for &i in oob {
                    trees_for_row[i].push(t);
                }
            }
            let mut y = Vec::new();
            let mut preds = Vec::new();
            let mut skipped = 0usize;
            for (r, ts) in trees_for_row.iter().enumerate() {
                if ts.is_empty() {
                    skipped += 1;
                    continue;
                }
                validate_sample(data.features.row(r), model.feature_names.len())?;
                let sum: f64 = ts
                    .iter()
                    .map(|&t| walk_to_leaf(&model.trees[t], data.features.row(r)))
                    .sum();
                preds.push(sum / ts.len() as f64);
                y.push(data.target[r]);
            }
            if y.is_empty() {
                return Err(Error::NoOobRows);
            }
            Ok(Evaluation {
                r2: r_squared(&y, &preds)?,
                rows_used: y.len(),
                rows_skipped: skipped,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization: versioned document with trees flattened in preorder
// ---------------------------------------------------------------------------

const MODEL_FORMAT: &str = "innodex-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    master_seed: u64,
    hyperparams: Hyperparams,
    feature_names: Vec<String>,
    scaler: ScalerParams,
    oob_indices: Vec<Vec<usize>>,
    trees: Vec<TreeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeDoc {
    nodes: Vec<FlatNode>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FlatNode {
    mean: f64,
    samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<FlatSplit>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FlatSplit {
    feature: usize,
    threshold: f64,
}

fn flatten(node: &TreeNode, out: &mut Vec<FlatNode>) {
    match node {
        TreeNode::Leaf { mean, samples } => out.push(FlatNode {
            mean: *mean,
            samples: *samples,
            split: None,
        }),
        TreeNode::Split {
            mean,
            samples,
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(FlatNode {
                mean: *mean,
                samples: *samples,
                split: Some(FlatSplit {
                    feature: *feature,
                    threshold: *threshold,
                }),
            });
            flatten(left, out);
            flatten(right, out);
        }
    }
}

fn unflatten(nodes: &[FlatNode], pos: &mut usize) -> Result<TreeNode> {
    let node = nodes
        .get(*pos)
        .ok_or_else(|| Error::ModelFormat("truncated tree node list".into()))?;
    *pos += 1;
    match &node.split {
        None => Ok(TreeNode::Leaf {
            mean: node.mean,
            samples: node.samples,
        }),
        Some(split) => {
            let (mean, samples) = (node.mean, node.samples);
            let (feature, threshold) = (split.feature, split.threshold);
            let left = unflatten(nodes, pos)?;
            let right = unflatten(nodes, pos)?;
            Ok(TreeNode::Split {
                mean,
                samples,
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
    }
}

impl ForestModel {
    fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            master_seed: self.master_seed,
            hyperparams: self.hyperparams.clone(),
            feature_names: self.feature_names.clone(),
            scaler: self.scaler.clone(),
            oob_indices: self.oob_indices.clone(),
            trees: self
                .trees
                .iter()
                .map(|t| {
                    let mut nodes = Vec::with_capacity(t.node_count());
                    flatten(t, &mut nodes);
                    TreeDoc { nodes }
                })
                .collect(),
        }
    }

    fn from_doc(doc: ModelDoc) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!(
                "unexpected format {:?}",
                doc.format
            )));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        let k = doc.feature_names.len();
        let mut trees = Vec::with_capacity(doc.trees.len());
        for tree_doc in &doc.trees {
            if let Some(node) = tree_doc
                .nodes
                .iter()
                .find(|n| n.split.as_ref().is_some_and(|s| s.feature >= k))
            {
                return Err(Error::ModelFormat(format!(
                    "split feature {} out of range for {k} features",
                    node.split.as_ref().unwrap().feature
                )));
            }
            let mut pos = 0;
            let tree = unflatten(&tree_doc.nodes, &mut pos)?;
            if pos != tree_doc.nodes.len() {
                return Err(Error::ModelFormat("trailing nodes after tree".into()));
            }
            trees.push(tree);
        }
        Ok(ForestModel {
            trees,
            hyperparams: doc.hyperparams,
            master_seed: doc.master_seed,
            oob_indices: doc.oob_indices,
            feature_names: doc.feature_names,
            scaler: doc.scaler,
        })
    }

    /// Compact canonical serialization; the model hash is the SHA-256 of
    /// these bytes.
    pub fn to_canonical_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&self.to_doc())?)
    }

    pub fn hash(&self) -> Result<String> {
        let bytes = self.to_canonical_bytes()?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_slice(bytes)
            .map_err(|e| Error::ModelFormat(format!("parse error: {e}")))?;
        Self::from_doc(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path.as_ref())?;
        file.write_all(self.to_json_pretty()?.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::from_json(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleId;

    pub(crate) fn supervised(rows: Vec<Vec<f64>>, target: Vec<f64>) -> SupervisedMatrix {
        let k = rows[0].len();
        let row_ids = (0..rows.len())
            .map(|i| SampleId::new(format!("C{i:03}"), 2010))
            .collect();
        let column_ids = (0..k).map(|c| format!("m{c}")).collect();
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        let missing = vec![false; values.len()];
        SupervisedMatrix {
            features: Panel::new(row_ids, column_ids, values, missing).unwrap(),
            target,
            target_name: "score".into(),
            dropped_rows: 0,
        }
    }

    fn loose() -> Hyperparams {
        Hyperparams {
            n_trees: 1,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: false,
        }
    }

    #[test]
    fn two_point_split() {
        let data = supervised(vec![vec![0.0], vec![1.0]], vec![0.0, 10.0]);
        let tree = fit_tree(&data, &[0, 1], &loose(), 7).unwrap();
        match &tree {
            TreeNode::Split {
                mean,
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                assert_eq!(*mean, 5.0);
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
                assert_eq!(left.mean(), 0.0);
                assert_eq!(right.mean(), 10.0);
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(predict_tree(&tree, &[1.0]).unwrap(), 10.0);
        // Values exactly at the threshold route left.
        assert_eq!(predict_tree(&tree, &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn constant_target_yields_leaf() {
        let data = supervised(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![4.0, 4.0, 4.0],
        );
        let tree = fit_tree(&data, &[0, 1, 2], &loose(), 7).unwrap();
        assert!(tree.is_leaf());
        assert_eq!(tree.mean(), 4.0);
    }

    #[test]
    fn max_depth_zero_yields_leaf() {
        let data = supervised(vec![vec![0.0], vec![1.0]], vec![0.0, 10.0]);
        let hp = Hyperparams {
            max_depth: Some(0),
            ..loose()
        };
        let tree = fit_tree(&data, &[0, 1], &hp, 7).unwrap();
        assert!(tree.is_leaf());
        assert_eq!(tree.mean(), 5.0);
    }

    #[test]
    fn empty_row_subset_rejected() {
        let data = supervised(vec![vec![0.0]], vec![1.0]);
        assert!(matches!(
            fit_tree(&data, &[], &loose(), 7),
            Err(Error::EmptyRowSubset)
        ));
    }

    #[test]
    fn single_leaf_predicts_its_mean() {
        let tree = TreeNode::Leaf {
            mean: 4.0,
            samples: 3,
        };
        assert_eq!(predict_tree(&tree, &[123.0]).unwrap(), 4.0);
        assert_eq!(predict_tree(&tree, &[]).unwrap(), 4.0);
    }

    #[test]
    fn non_finite_sample_rejected() {
        let tree = TreeNode::Leaf {
            mean: 4.0,
            samples: 1,
        };
        assert!(matches!(
            predict_tree(&tree, &[f64::NAN]),
            Err(Error::NonFiniteFeature { index: 0 })
        ));
    }

    fn leaf_forest(means: &[f64]) -> ForestModel {
        ForestModel {
            trees: means
                .iter()
                .map(|&m| TreeNode::Leaf {
                    mean: m,
                    samples: 1,
                })
                .collect(),
            hyperparams: Hyperparams {
                n_trees: means.len(),
                bootstrap: false,
                ..Hyperparams::default()
            },
            master_seed: 0,
            oob_indices: vec![Vec::new(); means.len()],
            feature_names: vec!["m0".into()],
            scaler: ScalerParams {
                column_ids: vec!["m0".into()],
                means: vec![0.0],
                stds: vec![1.0],
                constant: vec![false],
            },
        }
    }

    #[test]
    fn forest_prediction_is_tree_mean() {
        let model = leaf_forest(&[2.0, 4.0]);
        assert_eq!(predict_forest(&model, &[0.0]).unwrap(), 3.0);
        let single = leaf_forest(&[7.5]);
        assert_eq!(predict_forest(&single, &[0.0]).unwrap(), 7.5);
    }

    #[test]
    fn forest_matches_manual_path_walks() {
        let data = crate::synth::linear_fixture(60, 4, 0.1, 99).supervised();
        let hp = Hyperparams {
            n_trees: 10,
            min_samples_leaf: 2,
            ..Hyperparams::default()
        };
        let model = fit_forest(&data, &hp, 5, ScalerParams::identity(&data.features.column_ids))
            .unwrap();
        let sample = data.features.row(3);
        let manual: f64 = model
            .trees
            .iter()
            .map(|t| predict_tree(t, sample).unwrap())
            .sum::<f64>()
            / model.trees.len() as f64;
        assert_eq!(predict_forest(&model, sample).unwrap(), manual);
    }

    #[test]
    fn r_squared_examples() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(
            r_squared(&[2.0, 2.0], &[1.0, 3.0]),
            Err(Error::ConstantTarget)
        ));
    }

    fn weighted_mean_holds(node: &TreeNode) -> bool {
        match node {
            TreeNode::Leaf { .. } => true,
            TreeNode::Split {
                mean,
                samples,
                left,
                right,
                ..
            } => {
                let combined = (left.mean() * left.samples() as f64
                    + right.mean() * right.samples() as f64)
                    / *samples as f64;
                (combined - mean).abs() <= 1e-9 * mean.abs().max(1.0)
                    && left.samples() + right.samples() == *samples
                    && weighted_mean_holds(left)
                    && weighted_mean_holds(right)
            }
        }
    }

    #[test]
    fn split_means_are_weighted_child_means() {
        let data = crate::synth::linear_fixture(80, 5, 0.2, 21).supervised();
        let hp = Hyperparams {
            n_trees: 5,
            min_samples_leaf: 3,
            ..Hyperparams::default()
        };
        let model = fit_forest(&data, &hp, 3, ScalerParams::identity(&data.features.column_ids))
            .unwrap();
        for tree in &model.trees {
            assert!(weighted_mean_holds(tree));
        }
    }

    #[test]
    fn same_seed_same_model() {
        let data = crate::synth::linear_fixture(50, 4, 0.1, 11).supervised();
        let hp = Hyperparams {
            n_trees: 8,
            min_samples_leaf: 2,
            ..Hyperparams::default()
        };
        let scaler = ScalerParams::identity(&data.features.column_ids);
        let a = fit_forest(&data, &hp, 42, scaler.clone()).unwrap();
        let b = fit_forest(&data, &hp, 42, scaler.clone()).unwrap();
        assert_eq!(a.to_canonical_bytes().unwrap(), b.to_canonical_bytes().unwrap());
        let c = fit_forest(&data, &hp, 43, scaler).unwrap();
        assert_ne!(a.to_canonical_bytes().unwrap(), c.to_canonical_bytes().unwrap());
    }

    #[test]
    fn thread_count_does_not_change_model() {
        let data = crate::synth::linear_fixture(50, 4, 0.1, 13).supervised();
        let hp = Hyperparams {
            n_trees: 12,
            min_samples_leaf: 2,
            ..Hyperparams::default()
        };
        let scaler = ScalerParams::identity(&data.features.column_ids);
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = pool1.install(|| fit_forest(&data, &hp, 42, scaler.clone()).unwrap());
        let b = pool4.install(|| fit_forest(&data, &hp, 42, scaler).unwrap());
        assert_eq!(a.to_canonical_bytes().unwrap(), b.to_canonical_bytes().unwrap());
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let data = crate::synth::linear_fixture(40, 3, 0.1, 17).supervised();
        let hp = Hyperparams {
            n_trees: 6,
            min_samples_leaf: 2,
            ..Hyperparams::default()
        };
        let model = fit_forest(&data, &hp, 9, ScalerParams::identity(&data.features.column_ids))
            .unwrap();
        let json = model.to_json_pretty().unwrap();
        let back = ForestModel::from_json(json.as_bytes()).unwrap();
        assert_eq!(
            model.to_canonical_bytes().unwrap(),
            back.to_canonical_bytes().unwrap()
        );
        assert_eq!(model.hash().unwrap(), back.hash().unwrap());
        for r in 0..data.features.n_rows() {
            let s = data.features.row(r);
            assert_eq!(
                predict_forest(&model, s).unwrap(),
                predict_forest(&back, s).unwrap()
            );
        }
    }

    #[test]
    fn oob_bookkeeping_is_consistent() {
        let data = crate::synth::linear_fixture(40, 3, 0.1, 19).supervised();
        let hp = Hyperparams {
            n_trees: 5,
            min_samples_leaf: 2,
            ..Hyperparams::default()
        };
        let model = fit_forest(&data, &hp, 1, ScalerParams::identity(&data.features.column_ids))
            .unwrap();
        for oob in &model.oob_indices {
            assert!(oob.windows(2).all(|w| w[0] < w[1]), "sorted, unique");
            assert!(oob.iter().all(|&i| i < 40));
        }
    }

    #[test]
    fn malformed_model_files_rejected() {
        let data = supervised(vec![vec![0.0], vec![1.0]], vec![0.0, 10.0]);
        let model = fit_forest(
            &data,
            &Hyperparams {
                n_trees: 1,
                min_samples_leaf: 1,
                bootstrap: false,
                ..Hyperparams::default()
            },
            0,
            ScalerParams::identity(&data.features.column_ids),
        )
        .unwrap();
        let json = model.to_json_pretty().unwrap();

        let wrong_version = json.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(
            ForestModel::from_json(wrong_version.as_bytes()),
            Err(Error::ModelFormat(_))
        ));
        let bad_feature = json.replace("\"feature\": 0", "\"feature\": 7");
        assert!(matches!(
            ForestModel::from_json(bad_feature.as_bytes()),
            Err(Error::ModelFormat(_))
        ));
        assert!(matches!(
            ForestModel::from_json(b"not json"),
            Err(Error::ModelFormat(_))
        ));
    }

    #[test]
    fn evaluate_oob_requires_bootstrap() {
        let data = supervised(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]);
        let model = fit_forest(
            &data,
            &Hyperparams {
                n_trees: 1,
                min_samples_leaf: 1,
                bootstrap: false,
                ..Hyperparams::default()
            },
            0,
            ScalerParams::identity(&data.features.column_ids),
        )
        .unwrap();
        assert!(matches!(
            evaluate(&model, &data, EvalMode::Oob),
            Err(Error::OobUnavailable)
        ));
        let in_sample = evaluate(&model, &data, EvalMode::InSample).unwrap();
        assert_eq!(in_sample.r2, 1.0);
    }
}

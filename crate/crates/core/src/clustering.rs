//! k-means over contribution vectors.
//!
//! Seeding is k-means++ (next center drawn with probability proportional to
//! squared distance from the chosen set) and refinement is Lloyd iteration
//! with squared-Euclidean distance on raw contribution vectors.
//!
//! All order-sensitive arithmetic (sampling walks, center sums, inertia)
//! runs over a canonical ordering of the points sorted by coordinates, so
//! permuting the input rows permutes the assignments and nothing else.

use std::io::Write;

use rand::Rng;

use crate::attribution::ContributionMatrix;
use crate::error::{Error, Result};
use crate::seeding::{derive2, rng_for, stream};

/// Result of one k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centers.
    pub inertia: f64,
    pub iterations_run: usize,
    pub seed: u64,
    /// Inertia recorded at every assignment step; non-increasing.
    pub inertia_trace: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = dist2(point, &centers[0]);
    for (j, c) in centers.iter().enumerate().skip(1) {
        let d = dist2(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

fn validate_points(points: &[Vec<f64>]) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let dim = points[0].len();
    for (row, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePoint { row });
        }
    }
    Ok(dim)
}

/// Indices of `points` sorted lexicographically by coordinates.
fn canonical_order(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .find_map(|(x, y)| match x.partial_cmp(y).unwrap() {
                std::cmp::Ordering::Equal => None,
                other => Some(other),
            })
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// k-means++ seeding: first center uniform, each next center drawn with
/// probability proportional to squared distance from the chosen set.
pub fn kmeanspp_init(points: &[Vec<f64>], k: usize, rng_seed: u64) -> Result<Vec<Vec<f64>>> {
    validate_points(points)?;
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let order = canonical_order(points);
    let distinct = {
        let mut count = 1;
        for w in order.windows(2) {
            if points[w[0]] != points[w[1]] {
                count += 1;
            }
        }
        count
    };
    if k > distinct {
        return Err(Error::KExceedsDistinctPoints { k, distinct });
    }

    let mut rng = rng_for(rng_seed);
    let n = points.len();
    let first = order[rng.random_range(0..n)];
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();

    while centers.len() < k {
        let total: f64 = order.iter().map(|&i| d2[i]).sum();
        let r = rng.random_range(0.0..total);
        let mut cum = 0.0;
        let mut chosen = order[n - 1];
        for &i in &order {
            cum += d2[i];
            if cum > r {
                chosen = i;
                break;
            }
        }
        let center = points[chosen].clone();
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &center);
            if d < d2[i] {
                d2[i] = d;
            }
        }
        centers.push(center);
    }
    Ok(centers)
}

/// Lloyd iteration: alternate nearest-center assignment (ties to the lowest
/// index) and mean updates until the inertia improvement drops below `tol`,
/// the centers stop moving, or `max_iter` is reached. An empty cluster is
/// re-seeded to the point currently farthest from its assigned center.
pub fn lloyd(
    points: &[Vec<f64>],
    mut centers: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    let dim = validate_points(points)?;
    if centers.is_empty() || max_iter == 0 {
        return Err(Error::Config("need >= 1 center and >= 1 iteration".into()));
    }
    for c in &centers {
        if c.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.len(),
            });
        }
    }
    let k = centers.len();
    let order = canonical_order(points);

    let assign = |centers: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let assignments: Vec<usize> = points.iter().map(|p| nearest(p, centers).0).collect();
        let inertia: f64 = order
            .iter()
            .map(|&i| dist2(&points[i], &centers[assignments[i]]))
            .sum();
        (assignments, inertia)
    };
    let update = |assignments: &[usize], centers: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for &i in &order {
            let a = assignments[i];
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(&points[i]) {
                *s += v;
            }
        }
        sums.iter_mut()
            .zip(&counts)
            .enumerate()
            .map(|(j, (sum, &count))| {
                if count == 0 {
                    // Keep the stale center; re-seeding happened beforehand,
                    // so this only occurs for degenerate duplicate data.
                    centers[j].clone()
                } else {
                    sum.iter().map(|s| s / count as f64).collect()
                }
            })
            .collect()
    };

    let mut trace = Vec::new();
    let mut assignments;
    let mut prev_inertia = f64::INFINITY;
    let mut iterations_run = 0;

    loop {
        iterations_run += 1;
        let (mut a, inertia) = assign(&centers);
        trace.push(inertia);

        // Re-seed empty clusters from the worst-fit points.
        let mut occupied = vec![false; k];
        for &x in &a {
            occupied[x] = true;
        }
        let mut taken: Vec<usize> = Vec::new();
        for j in 0..k {
            if occupied[j] {
                continue;
            }
            let mut far: Option<(usize, f64)> = None;
            for &i in &order {
                if taken.contains(&i) {
                    continue;
                }
                let d = dist2(&points[i], &centers[a[i]]);
                if far.is_none_or(|(_, fd)| d > fd) {
                    far = Some((i, d));
                }
            }
            if let Some((i, _)) = far {
                centers[j] = points[i].clone();
                a[i] = j;
                taken.push(i);
            }
        }
        assignments = a;

        let new_centers = update(&assignments, &centers);
        let moved = new_centers != centers;
        centers = new_centers;

        if !moved {
            // Fixed point: assignments are already nearest-center.
            return Ok(Clustering {
                centers,
                assignments,
                inertia: trace[trace.len() - 1],
                iterations_run,
                seed: 0,
                inertia_trace: trace,
            });
        }
        if prev_inertia - trace[trace.len() - 1] < tol || iterations_run >= max_iter {
            break;
        }
        prev_inertia = trace[trace.len() - 1];
    }

    // Centers moved on the last iteration; refresh assignments so that the
    // returned labels are nearest-center against the returned centers.
    let (final_assignments, final_inertia) = assign(&centers);
    trace.push(final_inertia);
    Ok(Clustering {
        centers,
        assignments: final_assignments,
        inertia: final_inertia,
        iterations_run,
        seed: 0,
        inertia_trace: trace,
    })
}

impl Clustering {
    /// Post-hoc check that every sample is assigned to its nearest center.
    pub fn assignments_are_nearest(&self, points: &[Vec<f64>]) -> bool {
        points
            .iter()
            .zip(&self.assignments)
            .all(|(p, &a)| nearest(p, &self.centers).0 == a)
    }
}

/// Options for [`cluster_contributions`].
#[derive(Debug, Clone)]
pub struct ClusterOptions {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Average each country's contribution vectors over its years before
    /// clustering; off clusters country-year rows directly.
    pub aggregate_years: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            k: 20,
            seed: 0,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
            aggregate_years: true,
        }
    }
}

/// A clustering of labeled contribution vectors.
#[derive(Debug, Clone)]
pub struct ClusterRun {
    /// One label per clustered point: a country, or country:year.
    pub labels: Vec<String>,
    pub clustering: Clustering,
}

/// Labeled points for clustering: country means over years, or raw rows.
pub fn cluster_points(matrix: &ContributionMatrix, aggregate_years: bool) -> (Vec<String>, Vec<Vec<f64>>) {
    if !aggregate_years {
        let labels = matrix.rows.iter().map(|r| r.sample_id.to_string()).collect();
        let points = matrix.rows.iter().map(|r| r.contributions.clone()).collect();
        return (labels, points);
    }
    let mut labels: Vec<String> = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for row in &matrix.rows {
        let pos = labels.iter().position(|l| *l == row.sample_id.country);
        let idx = match pos {
            Some(i) => i,
            None => {
                labels.push(row.sample_id.country.clone());
                sums.push(vec![0.0; matrix.n_features()]);
                counts.push(0);
                labels.len() - 1
            }
        };
        counts[idx] += 1;
        for (s, v) in sums[idx].iter_mut().zip(&row.contributions) {
            *s += v;
        }
    }
    let points = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &c)| sum.into_iter().map(|s| s / c as f64).collect())
        .collect();
    (labels, points)
}

/// Best-of-`restarts` k-means over contribution vectors.
///
/// Each restart derives its own seed; the run with the lowest inertia wins
/// (ties to the lowest restart index). Clusters are relabeled canonically by
/// their first member's sample order.
pub fn cluster_contributions(
    matrix: &ContributionMatrix,
    opts: &ClusterOptions,
) -> Result<ClusterRun> {
    if matrix.rows.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if opts.k == 0 || opts.restarts == 0 {
        return Err(Error::Config("k and restarts must be >= 1".into()));
    }
    let (labels, points) = cluster_points(matrix, opts.aggregate_years);

    let mut best: Option<Clustering> = None;
    for r in 0..opts.restarts {
        let restart_seed = derive2(opts.seed, stream::RESTART, r as u64);
        let centers = kmeanspp_init(&points, opts.k, restart_seed)?;
        let mut run = lloyd(&points, centers, opts.max_iter, opts.tol)?;
        run.seed = restart_seed;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut clustering = best.expect("restarts >= 1");
    relabel_canonically(&mut clustering);
    Ok(ClusterRun { labels, clustering })
}

/// Relabel clusters by the sample order of their first member; clusters with
/// no members sort last in original order.
fn relabel_canonically(clustering: &mut Clustering) {
    let k = clustering.centers.len();
    let mut first_member = vec![usize::MAX; k];
    for (i, &a) in clustering.assignments.iter().enumerate() {
        if first_member[a] == usize::MAX {
            first_member[a] = i;
        }
    }
    let mut old_order: Vec<usize> = (0..k).collect();
    old_order.sort_by_key(|&j| (first_member[j], j));
    let mut new_of_old = vec![0usize; k];
    for (new, &old) in old_order.iter().enumerate() {
        new_of_old[old] = new;
    }
    clustering.centers = old_order
        .iter()
        .map(|&j| clustering.centers[j].clone())
        .collect();
    for a in clustering.assignments.iter_mut() {
        *a = new_of_old[*a];
    }
}

impl ClusterRun {
    pub fn k(&self) -> usize {
        self.clustering.centers.len()
    }

    /// Member labels per cluster, in sample order.
    pub fn rosters(&self) -> Vec<Vec<String>> {
        let mut rosters = vec![Vec::new(); self.k()];
        for (label, &a) in self.labels.iter().zip(&self.clustering.assignments) {
            rosters[a].push(label.clone());
        }
        rosters
    }

    /// Text report: one "Cluster n: member, member, ..." line per cluster.
    pub fn roster_text(&self, model_hash: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("model hash: {model_hash}\n"));
        out.push_str(&format!(
            "k = {}, seed = {}, inertia = {}, iterations = {}\n",
            self.k(),
            self.clustering.seed,
            self.clustering.inertia,
            self.clustering.iterations_run
        ));
        for (j, roster) in self.rosters().iter().enumerate() {
            out.push_str(&format!("Cluster {j}: {}\n", roster.join(", ")));
        }
        out
    }

    /// CSV of (label, cluster) with the model hash in a comment line.
    pub fn write_assignments_csv<W: Write>(&self, model_hash: &str, mut out: W) -> Result<()> {
        writeln!(out, "# model_hash: {model_hash}")?;
        let mut writer = csv::WriterBuilder::new().from_writer(&mut out);
        writer.write_record(["label", "cluster"])?;
        for (label, &a) in self.labels.iter().zip(&self.clustering.assignments) {
            writer.write_record([label.as_str(), &a.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

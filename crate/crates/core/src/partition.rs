//! Assignment of training rows to experts.
//!
//! Both strategies derive the expert count from a points-per-expert target,
//! `J = ceil(n / points_per_expert)`. Random partitioning deals a seeded
//! shuffle round-robin, so sizes differ by at most one. K-means produces
//! whatever cluster sizes the data implies; only `J` is fixed.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    Random,
    Kmeans,
}

impl std::fmt::Display for PartitionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PartitionStrategy::Random => "random",
            PartitionStrategy::Kmeans => "kmeans",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<usize>,
    n_experts: usize,
    strategy: PartitionStrategy,
    seed: u64,
}

impl Partition {
    /// Validates that every expert in `0..n_experts` owns at least one row.
    pub fn new(assignments: Vec<usize>, n_experts: usize, strategy: PartitionStrategy, seed: u64) -> Result<Self> {
        if n_experts == 0 || assignments.is_empty() {
            return Err(Error::invalid("partition needs at least one row and one expert"));
        }
        let mut counts = vec![0usize; n_experts];
        for &a in &assignments {
            if a >= n_experts {
                return Err(Error::invalid(format!(
                    "assignment {a} out of range for {n_experts} experts"
                )));
            }
            counts[a] += 1;
        }
        if let Some(j) = counts.iter().position(|c| *c == 0) {
            return Err(Error::invalid(format!("expert {j} owns no rows")));
        }
        Ok(Partition {
            assignments,
            n_experts,
            strategy,
            seed,
        })
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn n_rows(&self) -> usize {
        self.assignments.len()
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row indices owned by each expert, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_experts];
        for (row, &a) in self.assignments.iter().enumerate() {
            out[a].push(row);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_experts];
        for &a in &self.assignments {
            out[a] += 1;
        }
        out
    }
}

/// `ceil(n / points_per_expert)`, validating the target.
pub fn expert_count(n: usize, points_per_expert: usize) -> Result<usize> {
    if points_per_expert == 0 || points_per_expert > n {
        return Err(Error::invalid(format!(
            "points_per_expert must lie in [1, {n}], got {points_per_expert}"
        )));
    }
    Ok(n.div_ceil(points_per_expert))
}

pub fn random_partition(n: usize, points_per_expert: usize, seed: u64) -> Result<Partition> {
    let j = expert_count(n, points_per_expert)?;
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (k, row) in rows.into_iter().enumerate() {
        assignments[row] = k % j;
    }
    Partition::new(assignments, j, PartitionStrategy::Random, seed)
}

pub fn kmeans_partition(x: &DMatrix<f64>, points_per_expert: usize, seed: u64, max_iter: usize) -> Result<Partition> {
    kmeans_partition_traced(x, points_per_expert, seed, max_iter).map(|(p, _)| p)
}

/// Like [`kmeans_partition`], also returning the within-cluster sum of squares
/// after seeding and after every centroid update.
pub fn kmeans_partition_traced(
    x: &DMatrix<f64>,
    points_per_expert: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(Partition, Vec<f64>)> {
    let n = x.nrows();
    let k = expert_count(n, points_per_expert)?;
    if x.ncols() == 0 {
        return Err(Error::invalid("k-means needs at least one feature"));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(&points, k, &mut rng);

    let mut assignments = assign(&points, &centroids);
    repair_empty(&points, &mut centroids, &mut assignments);
    let mut trace = vec![objective(&points, &centroids, &assignments)];

    for _ in 0..max_iter {
        centroids = update_centroids(&points, &assignments, k, &centroids);
        trace.push(objective(&points, &centroids, &assignments));
        let mut next = assign(&points, &centroids);
        repair_empty(&points, &mut centroids, &mut next);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok((Partition::new(assignments, k, PartitionStrategy::Kmeans, seed)?, trace))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen[*i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Gives each empty cluster the point farthest from its centroid within the
/// currently largest cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|c| *c == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
        if counts[largest] < 2 {
            return;
        }
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if assignments[i] == largest {
                let d = sq_dist(p, &centroids[largest]);
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
        }
        assignments[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], k: usize, old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, cnt))| {
            if cnt == 0 {
                old[c].clone()
            } else {
                s.into_iter().map(|v| v / cnt as f64).collect()
            }
        })
        .collect()
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

//! K-Means over type vectors.
//!
//! Points are processed in type-id order, so the partition does not depend on
//! the row order of the input matrix. Initialization is k-means++ driven by a
//! seeded ChaCha stream; empty clusters are re-seeded with the point farthest
//! from its centroid. Centroid sums run in a fixed order, which keeps results
//! bit-identical across thread counts.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::type_repr::TypeMatrix;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Cluster counts considered when sweeping.
pub const SWEEP_KS: [usize; 5] = [32, 64, 128, 256, 512];
/// Default |C| for deep hierarchies (NDCG-evaluated KGs).
pub const DEFAULT_K_DEEP: usize = 64;
/// Default |C| for flat hierarchies (MRR-evaluated KGs).
pub const DEFAULT_K_FLAT: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of types ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("k = {k} exceeds the number of distinct type vectors ({distinct})")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("vector has dimension {found}, centroids have {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: BTreeMap<String, usize>,
    pub inertia: f64,
    /// Inertia after each assignment step, final step last.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_of(&self, type_id: &str) -> Option<usize> {
        self.assignment.get(type_id).copied()
    }

    /// Member type ids per cluster, each list sorted.
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.k];
        for (t, &c) in &self.assignment {
            out[c].push(t.clone());
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance, ties to the lowest id.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn assign_cluster(cm: &ClusterModel, v: &[f64]) -> Result<usize, ClusterError> {
    if v.len() != cm.dim() {
        return Err(ClusterError::DimensionMismatch {
            expected: cm.dim(),
            found: v.len(),
        });
    }
    Ok(nearest(v, &cm.centroids).0)
}

pub fn kmeans_fit(m: &TypeMatrix, k: usize, seed: u64, params: KMeansParams) -> Result<ClusterModel, ClusterError> {
    let n = m.n_rows();
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > n {
        return Err(ClusterError::TooManyClusters { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.type_ids()[a].cmp(&m.type_ids()[b]));
    let points: Vec<&[f64]> = order.iter().map(|&i| m.row(i)).collect();

    let distinct = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len();
    if distinct < k {
        return Err(ClusterError::TooFewDistinct { k, distinct });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, k, &mut rng);
    let mut history = Vec::new();

    for _ in 0..params.max_iters {
        let (labels, inertia) = assign_all(&points, &centroids);
        history.push(inertia);
        let mut updated = means(&points, &labels, &centroids);
        let repaired = repair_empty(&points, &labels, &mut updated);
        let movement = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if movement < params.tol && !repaired {
            break;
        }
    }

    // finish on an assignment step so every label is the argmin
    let (mut labels, mut inertia) = assign_all(&points, &centroids);
    for _ in 0..k {
        let mut patched = centroids.clone();
        if !repair_empty(&points, &labels, &mut patched) {
            break;
        }
        centroids = patched;
        (labels, inertia) = assign_all(&points, &centroids);
    }
    history.push(inertia);

    let assignment = order
        .iter()
        .zip(&labels)
        .map(|(&i, &c)| (m.type_ids()[i].clone(), c))
        .collect();
    Ok(ClusterModel {
        k,
        seed,
        centroids,
        assignment,
        inertia,
        inertia_history: history,
    })
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = rng.gen_range(0..points.len());
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        // at least k distinct points exist, so some d2 is positive
        let pick = pick.expect("positive distance mass");
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let nearest: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, centroids)).collect();
    let inertia = nearest.iter().map(|&(_, d)| d).sum();
    (nearest.into_iter().map(|(c, _)| c).collect(), inertia)
}

/// Cluster means; empty clusters keep their previous centroid.
fn means(points: &[&[f64]], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = previous.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((mut s, n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                s.iter_mut().for_each(|v| *v /= n as f64);
                s
            }
        })
        .collect()
}

/// Moves each empty cluster's centroid onto the point farthest from its own
/// centroid, taken from clusters that keep at least one other member.
/// Returns whether anything was repaired.
fn repair_empty(points: &[&[f64]], labels: &[usize], centroids: &mut [Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &c in labels {
        counts[c] += 1;
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return false;
    }
    let mut used = vec![false; points.len()];
    for c in empty {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let own = labels[i];
            if used[i] || counts[own] < 2 || centroids.iter().any(|cent| cent.as_slice() == *p) {
                continue;
            }
            let d = sq_dist(p, &centroids[own]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            counts[labels[i]] -= 1;
            centroids[c] = points[i].to_vec();
        }
    }
    true
}

/// Fits one model per distinct k, sorted by k.
pub fn sweep_k(m: &TypeMatrix, ks: &[usize], seed: u64, params: KMeansParams) -> Result<Vec<ClusterModel>, ClusterError> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter().map(|k| kmeans_fit(m, k, seed, params)).collect()
}

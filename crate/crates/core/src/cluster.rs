//! Spherical k-means over predicted preference directions.
//!
//! Points are unit-normalized; centroids are the re-normalized means of their
//! members, so every distance in the objective is a cosine distance.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cos_dist, dot, normalize};
use crate::rng::derive_stream;
use crate::types::PreferenceVector;

pub const DEFAULT_K: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of cosine distances from each point to its centroid.
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after initialization and after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub index: usize,
    pub d_c: f64,
}

/// Nearest-centroid index by cosine distance; lowest index wins ties.
fn nearest(centroids: &[Vec<f64>], unit: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = 1.0 - dot(c, unit).clamp(-1.0, 1.0);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn distinct_directions(points: &[Vec<f64>]) -> usize {
    let mut seen = HashSet::new();
    for p in points {
        let key: Vec<i64> = p.iter().map(|v| (v * 1e9).round() as i64).collect();
        seen.insert(key);
    }
    seen.len()
}

/// Fits `k` unit centroids with k-means++ seeding and Lloyd iterations.
pub fn fit_kmeans(predictions: &[PreferenceVector], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterModel> {
    let points: Vec<Vec<f64>> = predictions.iter().map(|p| normalize(p.values())).collect::<Result<_>>()?;
    fit_unit(&points, k, seed, max_iters, tol)
}

fn fit_unit(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::domain("k must be >= 1"));
    }
    let distinct = distinct_directions(points);
    if distinct < k {
        return Err(Error::domain(format!("need at least {k} distinct directions, found {distinct}")));
    }
    let mut centroids = plus_plus(points, k, seed);
    let mut labels = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let inertia0 = assign_all(points, &centroids, &mut labels, &mut dists);
    let mut trace = vec![inertia0];
    let mut iterations_run = 0;

    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; points[0].len()]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            // Nonnegative unit inputs cannot sum to zero.
            let updated = normalize(&sums[c]).unwrap_or_else(|_| centroids[c].clone());
            let shift = updated.iter().zip(&centroids[c]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            movement = movement.max(shift);
            centroids[c] = updated;
        }
        let inertia = assign_all(points, &centroids, &mut labels, &mut dists);
        let inertia = repair_empty(points, &mut centroids, &mut labels, &mut dists).unwrap_or(inertia);
        trace.push(inertia);
        iterations_run += 1;
        if movement < tol {
            break;
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        inertia: *trace.last().expect("trace has the initial inertia"),
        seed,
        iterations_run,
        inertia_trace: trace,
    })
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (l, d) = nearest(centroids, p);
        labels[i] = l;
        dists[i] = d;
        total += d;
    }
    total
}

/// Re-seeds every empty cluster with the point farthest from its centroid.
/// Returns the new inertia if anything changed.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> Option<f64> {
    let k = centroids.len();
    let mut changed = false;
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
        let far = (0..points.len())
            .filter(|&i| dists[i] > 0.0)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("an empty cluster implies some point sits off its centroid");
        centroids[empty] = points[far].clone();
        labels[far] = empty;
        dists[far] = 0.0;
        changed = true;
    }
    changed.then(|| dists.iter().sum())
}

fn plus_plus(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = derive_stream(seed, "kmeans-init", 0);
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| 1.0 - dot(p, &centroids[0]).clamp(-1.0, 1.0)).collect();
    while centroids.len() < k {
        // For unit vectors squared Euclidean distance is 2 * cosine distance,
        // so D^2 weighting is cosine-distance weighting.
        let total: f64 = closest.iter().sum();
        let mut target = rng.uniform() * total;
        let mut pick = None;
        for (i, w) in closest.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < *w {
                break;
            }
            target -= w;
        }
        let next = points[pick.expect("distinct-direction check guarantees positive mass")].clone();
        for (c, p) in closest.iter_mut().zip(points) {
            *c = c.min(1.0 - dot(p, &next).clamp(-1.0, 1.0));
        }
        centroids.push(next);
    }
    centroids
}

impl ClusterModel {
    /// Nearest centroid for a (not necessarily normalized) prediction.
    pub fn assign(&self, prediction: &[f64]) -> Result<Assignment> {
        let unit = normalize(prediction)?;
        if unit.len() != self.centroids[0].len() {
            return Err(Error::domain("prediction length does not match centroids"));
        }
        let (index, d_c) = nearest(&self.centroids, &unit);
        Ok(Assignment { index, d_c })
    }

    /// `cos_dist` from `prediction` to centroid `index`.
    pub fn distance_to(&self, prediction: &[f64], index: usize) -> Result<f64> {
        cos_dist(prediction, &self.centroids[index])
    }
}

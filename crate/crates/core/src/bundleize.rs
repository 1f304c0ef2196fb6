//! Integer bundles from unit centroids, and the end-to-end error budget.
//!
//! Rounding searches scales `s` in `(0, max(grid)]`: `clamp(round(s * u))` only
//! changes where some `s * u_j` crosses a half-integer, so evaluating one
//! scale per interval between those crossings (plus the grid points
//! themselves) covers every candidate any scale in range could produce.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::error::{Error, Result};
use crate::geometry::{angular_dist, cos_dist, normalize};
use crate::types::{Bundle, BundlePool, ItemCatalog};

/// Candidates within this much of the best are treated as ties.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleizationResult {
    pub bundle: Bundle,
    pub source_centroid: usize,
    pub scale_used: f64,
    /// `cos_dist(centroid, bundle)`.
    pub d_o: f64,
}

pub fn default_scale_grid() -> Vec<f64> {
    (1..=50).map(f64::from).collect()
}

fn candidate(u: &[f64], s: f64, catalog: &ItemCatalog) -> Vec<u32> {
    u.iter()
        .enumerate()
        .map(|(j, v)| {
            let r = (s * v).round().max(0.0) as u32;
            r.clamp(catalog.min_qty[j], catalog.max_qty[j])
        })
        .collect()
}

/// Scales to evaluate, ascending.
fn candidate_scales(u: &[f64], s_max: f64, grid: &[f64]) -> Vec<f64> {
    let mut breaks = Vec::new();
    for &v in u.iter().filter(|v| **v > 0.0) {
        let mut k = 0.5;
        while k / v <= s_max {
            breaks.push(k / v);
            k += 1.0;
        }
    }
    breaks.sort_by(f64::total_cmp);
    let mut scales: Vec<f64> = breaks.windows(2).map(|w| 0.5 * (w[0] + w[1])).filter(|s| *s > 0.0).collect();
    scales.extend(grid.iter().copied());
    scales.sort_by(f64::total_cmp);
    scales.dedup();
    scales
}

/// Rounds `centroid` to the integer vector closest in direction among all
/// scalings up to `max(scale_grid)`, clamped to the catalog bounds.
pub fn round_to_bundle(centroid: &[f64], catalog: &ItemCatalog, scale_grid: &[f64], id: u32) -> Result<BundleizationResult> {
    if centroid.len() != catalog.dim {
        return Err(Error::domain(format!("centroid has {} entries, catalog has {}", centroid.len(), catalog.dim)));
    }
    if scale_grid.is_empty() || scale_grid.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::domain("scale grid must be nonempty, finite and positive"));
    }
    if centroid.iter().any(|v| *v < 0.0) {
        return Err(Error::domain("centroid has negative entries"));
    }
    let u = normalize(centroid)?;
    let s_max = scale_grid.iter().cloned().fold(0.0, f64::max);
    let mut best: Option<(Vec<u32>, f64, f64)> = None;
    for s in candidate_scales(&u, s_max, scale_grid) {
        let c = candidate(&u, s, catalog);
        if c.iter().all(|v| *v == 0) {
            continue;
        }
        if best.as_ref().is_some_and(|b| b.0 == c) {
            continue;
        }
        let cf: Vec<f64> = c.iter().map(|v| *v as f64).collect();
        let d = cos_dist(&u, &cf)?;
        if best.as_ref().is_none_or(|b| d < b.2 - TIE_EPS) {
            best = Some((c, s, d));
        }
    }
    let (volumes, scale_used, d_o) = best.ok_or_else(|| Error::domain("every candidate bundle is empty"))?;
    Ok(BundleizationResult { bundle: Bundle::new(id, volumes, catalog)?, source_centroid: 0, scale_used, d_o })
}

/// One pool entry as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub id: u32,
    pub volumes: Vec<u32>,
    pub source_centroid: usize,
    pub d_o: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolBuild {
    pub pool: BundlePool,
    /// One result per centroid, before merging.
    pub results: Vec<BundleizationResult>,
    /// Bundle id served for each centroid index.
    pub centroid_to_bundle: Vec<u32>,
}

impl PoolBuild {
    pub fn entries(&self) -> Vec<PoolEntry> {
        self.pool
            .bundles()
            .iter()
            .map(|b| {
                let r = self.results.iter().find(|r| r.bundle.id == b.id).expect("every pooled bundle has a result");
                PoolEntry { id: b.id, volumes: b.volumes.clone(), source_centroid: r.source_centroid, d_o: r.d_o }
            })
            .collect()
    }

    pub fn bundle_for_centroid(&self, k: usize) -> &Bundle {
        self.pool.get(self.centroid_to_bundle[k]).expect("mapping points into the pool")
    }

    /// Per-bundle `d_o`, in pool order.
    pub fn d_o(&self) -> Vec<f64> {
        self.entries().iter().map(|e| e.d_o).collect()
    }
}

/// Rounds every centroid; identical integer bundles are merged, keeping the
/// id (centroid index) of the first.
pub fn build_pool(model: &ClusterModel, catalog: &ItemCatalog, scale_grid: &[f64]) -> Result<PoolBuild> {
    let mut results = Vec::with_capacity(model.k);
    let mut pooled: Vec<Bundle> = Vec::new();
    let mut mapping = Vec::with_capacity(model.k);
    for (k, c) in model.centroids.iter().enumerate() {
        let mut r = round_to_bundle(c, catalog, scale_grid, k as u32)?;
        r.source_centroid = k;
        match pooled.iter().find(|b| b.volumes == r.bundle.volumes) {
            Some(existing) => {
                mapping.push(existing.id);
                r.bundle.id = existing.id;
            }
            None => {
                mapping.push(r.bundle.id);
                pooled.push(r.bundle.clone());
            }
        }
        results.push(r);
    }
    // Merged duplicates carry the surviving id; keep only the first result per id
    // for `entries`, which searches in order.
    Ok(PoolBuild { pool: BundlePool::new(pooled)?, results, centroid_to_bundle: mapping })
}

/// The three legs of the chain true -> prediction -> centroid -> bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub d_p: f64,
    pub d_c: f64,
    pub d_o: f64,
    pub total_bound: f64,
    pub realized: f64,
    pub realized_angular: f64,
    pub bound_angular: f64,
}

impl ErrorBudget {
    pub fn from_chain(truth: &[f64], prediction: &[f64], centroid: &[f64], bundle: &[f64]) -> Result<Self> {
        let (d_p, d_c, d_o) = (cos_dist(truth, prediction)?, cos_dist(prediction, centroid)?, cos_dist(centroid, bundle)?);
        let bound_angular = angular_dist(truth, prediction)? + angular_dist(prediction, centroid)? + angular_dist(centroid, bundle)?;
        Ok(ErrorBudget {
            d_p,
            d_c,
            d_o,
            total_bound: d_p + d_c + d_o,
            realized: cos_dist(truth, bundle)?,
            realized_angular: angular_dist(truth, bundle)?,
            bound_angular,
        })
    }

    pub fn cosine_bound_holds(&self) -> bool {
        self.realized <= self.total_bound + 1e-12
    }
}

/// Error budget for one user served through `model` and `build`.
pub fn audit_error_budget(truth: &[f64], prediction: &[f64], model: &ClusterModel, build: &PoolBuild) -> Result<ErrorBudget> {
    let a = model.assign(prediction)?;
    let bundle = build.bundle_for_centroid(a.index).as_f64();
    ErrorBudget::from_chain(truth, prediction, &model.centroids[a.index], &bundle)
}

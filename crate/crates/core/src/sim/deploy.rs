//! A trained model turned into something servable: per-user predictions,
//! clusters, and the bundle pool.

use serde::{Deserialize, Serialize};

use super::World;
use crate::bundleize::{build_pool, default_scale_grid, round_to_bundle, PoolBuild};
use crate::cluster::{fit_kmeans, ClusterModel, DEFAULT_K};
use crate::error::{Error, Result};
use crate::geometry::normalize;
use crate::model::Predictor;
use crate::policy::ServingSet;
use crate::types::{Bundle, FeatureRow, ItemCatalog, PreferenceVector};

/// Id of the incumbent hand-designed bundle; model pools never use it.
pub const HEURISTIC_BUNDLE_ID: u32 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    pub k: usize,
    pub scale_grid: Vec<f64>,
    /// Days of features averaged per serving prediction.
    pub window_days: u32,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub kmeans_seed: u64,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            k: DEFAULT_K,
            scale_grid: default_scale_grid(),
            window_days: 30,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-9,
            kmeans_seed: 1,
        }
    }
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.window_days == 0 || self.kmeans_max_iters == 0 {
            return Err(Error::validation("deployment: k, window_days and kmeans_max_iters must be >= 1"));
        }
        if self.scale_grid.is_empty() || self.scale_grid.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::validation("deployment: scale_grid must be nonempty and positive"));
        }
        Ok(())
    }
}

/// The population-average bundle a domain expert would design by hand.
pub fn heuristic_bundle(rows: &[FeatureRow], catalog: &ItemCatalog, scale_grid: &[f64]) -> Result<Bundle> {
    let mut acc = vec![0.0; catalog.dim];
    for r in rows {
        let u = normalize(r.label.values())?;
        acc.iter_mut().zip(u).for_each(|(a, v)| *a += v);
    }
    let mut b = round_to_bundle(&normalize(&acc)?, catalog, scale_grid, HEURISTIC_BUNDLE_ID)?.bundle;
    b.id = HEURISTIC_BUNDLE_ID;
    Ok(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub serving: ServingSet,
    /// Per-user prediction; `None` for users without any activity.
    pub predictions: Vec<Option<PreferenceVector>>,
    pub clusters: ClusterModel,
    pub pool_build: PoolBuild,
}

impl Deployment {
    /// Predicts every user from features as of `extra_days` past the offline
    /// snapshot, clusters the predictions and rounds the centroids.
    pub fn build(world: &World, model: &dyn Predictor, config: &DeploymentConfig, extra_days: u32, fallback: Bundle) -> Result<Self> {
        config.validate()?;
        let mut predictions = Vec::with_capacity(world.n_users());
        for u in 0..world.n_users() {
            predictions.push(match world.aggregated_features(u, config.window_days, extra_days) {
                Some((f, _)) => Some(model.predict(&f)?),
                None => None,
            });
        }
        Self::from_predictions(world, predictions, config, fallback)
    }

    pub fn from_predictions(
        world: &World,
        predictions: Vec<Option<PreferenceVector>>,
        config: &DeploymentConfig,
        fallback: Bundle,
    ) -> Result<Self> {
        let present: Vec<PreferenceVector> = predictions.iter().flatten().cloned().collect();
        let clusters = fit_kmeans(&present, config.k, config.kmeans_seed, config.kmeans_max_iters, config.kmeans_tol)?;
        let pool_build = build_pool(&clusters, &world.config.catalog, &config.scale_grid)?;
        let serving = ServingSet::new(pool_build.pool.clone(), fallback)?;
        Ok(Deployment { serving, predictions, clusters, pool_build })
    }

    /// Reassembles a deployment from stored parts.
    pub fn assemble(
        predictions: Vec<Option<PreferenceVector>>,
        clusters: ClusterModel,
        pool_build: PoolBuild,
        fallback: Bundle,
    ) -> Result<Self> {
        if pool_build.centroid_to_bundle.len() != clusters.k || clusters.centroids.len() != clusters.k {
            return Err(Error::validation("pool does not match the cluster model"));
        }
        if pool_build.centroid_to_bundle.iter().any(|id| pool_build.pool.get(*id).is_none()) {
            return Err(Error::validation("centroid mapped to a bundle outside the pool"));
        }
        let serving = ServingSet::new(pool_build.pool.clone(), fallback)?;
        Ok(Deployment { serving, predictions, clusters, pool_build })
    }

    /// Renumbers pool bundles through `ids`, which maps volumes to stable ids.
    pub fn renumber(&mut self, ids: &mut impl FnMut(&[u32]) -> u32) -> Result<()> {
        let mut bundles = Vec::new();
        let mut remap = std::collections::BTreeMap::new();
        for b in self.pool_build.pool.bundles() {
            let id = ids(&b.volumes);
            remap.insert(b.id, id);
            bundles.push(Bundle { id, volumes: b.volumes.clone() });
        }
        let pool = crate::types::BundlePool::new(bundles)?;
        for r in &mut self.pool_build.results {
            r.bundle.id = remap[&r.bundle.id];
        }
        for m in &mut self.pool_build.centroid_to_bundle {
            *m = remap[m];
        }
        self.pool_build.pool = pool.clone();
        self.serving = ServingSet::new(pool, self.serving.fallback.clone())?;
        Ok(())
    }
}

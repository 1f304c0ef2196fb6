//! Serving a model that is periodically retrained on its own takes.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{step_day, Arm, DayOutcome, Deployment, DeploymentConfig, NoveltyState, Purchase, World};
use crate::error::{Error, Result};
use crate::geometry::{daily_metrics, uniform_reference, MetricReport};
use crate::model::{AttentiveRegressor, AttentiveRegressorConfig};
use crate::policy::PolicyConfig;
use crate::types::{Bundle, FeatureRow, PreferenceVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Takes from this many trailing days form the retraining labels.
    pub label_window_days: u32,
    pub training: AttentiveRegressorConfig,
    pub deployment: DeploymentConfig,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            label_window_days: 28,
            training: AttentiveRegressorConfig { epochs: 25, ..AttentiveRegressorConfig::default() },
            deployment: DeploymentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainCheckpoint {
    pub day: u32,
    pub n_rows: usize,
    pub pool_size: usize,
    pub validation_cos_dist: f64,
    pub pool: Vec<Bundle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub metrics: Vec<MetricReport>,
    pub retrains: Vec<RetrainCheckpoint>,
    pub initial_pool: Vec<Bundle>,
}

impl FeedbackReport {
    /// Daily recommendation diversity; `None` on days without takes.
    pub fn rd(&self) -> Vec<Option<f64>> {
        self.metrics.iter().map(|m| m.rd).collect()
    }
}

/// Stable ids for bundle volumes across retrains, so an unchanged bundle
/// keeps its id (and its novelty history).
#[derive(Default)]
struct BundleRegistry {
    ids: BTreeMap<Vec<u32>, u32>,
}

impl BundleRegistry {
    fn id(&mut self, volumes: &[u32]) -> u32 {
        let next = self.ids.len() as u32;
        *self.ids.entry(volumes.to_vec()).or_insert(next)
    }
}

fn retraining_rows(world: &World, purchases: &[Purchase], window_days: u32, extra_days: u32) -> Vec<FeatureRow> {
    let mut labels: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for p in purchases {
        let acc = labels.entry(p.user_id).or_insert_with(|| vec![0.0; world.dim()]);
        acc.iter_mut().zip(&p.quantities).for_each(|(a, q)| *a += f64::from(*q));
    }
    labels
        .into_iter()
        .filter(|(_, y)| y.iter().any(|v| *v > 0.0))
        .filter_map(|(user, y)| {
            let (features, agg_days) = world.aggregated_features(user as usize, window_days, extra_days)?;
            Some(FeatureRow { user_id: user, features, agg_days, label: PreferenceVector::new(y).ok()? })
        })
        .collect()
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.label_window_days == 0 {
            return Err(Error::validation("feedback: label_window_days must be >= 1"));
        }
        self.training.validate()?;
        self.deployment.validate()
    }
}

/// Serves `initial` for the world's horizon, retraining on logged takes
/// every `retrain_every` days and rebuilding clusters and pool each time.
/// `on_day` sees every simulated day; day 0 carries its full batch.
pub fn run_feedback_loop(
    world: &World,
    initial: Deployment,
    config: &FeedbackConfig,
    on_day: &mut dyn FnMut(&DayOutcome) -> Result<()>,
) -> Result<FeedbackReport> {
    config.validate()?;
    world.config.validate()?;
    let (horizon, every) = (world.config.horizon_days, world.config.retrain_every);
    let mut registry = BundleRegistry::default();
    let fallback = initial.serving.fallback.clone();
    let mut deployment = initial;
    deployment.renumber(&mut |v| registry.id(v))?;
    let initial_pool = deployment.serving.pool.bundles().to_vec();
    let mut arm = Arm { name: "model".into(), policy: PolicyConfig::Model, deployment: Arc::new(deployment) };
    let groups = vec![0; world.n_users()];
    let mut novelty = NoveltyState::default();
    novelty.mark_familiar(fallback.id);
    let reference = uniform_reference(world.dim());
    let mut purchases: Vec<Purchase> = Vec::new();
    let mut report = FeedbackReport { metrics: Vec::new(), retrains: Vec::new(), initial_pool };

    for day in 0..horizon {
        if day > 0 && day % every == 0 {
            let since = day.saturating_sub(config.label_window_days);
            purchases.retain(|p| p.day >= since);
            let rows = retraining_rows(world, &purchases, config.deployment.window_days, day);
            if rows.len() >= 10 {
                let training =
                    AttentiveRegressorConfig { seed: config.training.seed.wrapping_add(u64::from(day)), ..config.training.clone() };
                let model = AttentiveRegressor::train(&rows, &training)?;
                let mut next = Deployment::build(world, &model, &config.deployment, day, fallback.clone())?;
                next.renumber(&mut |v| registry.id(v))?;
                report.retrains.push(RetrainCheckpoint {
                    day,
                    n_rows: rows.len(),
                    pool_size: next.serving.pool.len(),
                    validation_cos_dist: model.training_report.final_mean_cos_dist,
                    pool: next.serving.pool.bundles().to_vec(),
                });
                arm.deployment = Arc::new(next);
            }
        }
        let out = step_day(world, std::slice::from_ref(&arm), &groups, &mut novelty, day, day == 0)?;
        on_day(&out)?;
        report.metrics.push(daily_metrics(day, &out.events, &arm.deployment.serving.all(), &reference)?);
        purchases.extend(out.purchases);
    }
    Ok(report)
}

//! A generated world with trained models and servable deployments.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggregationRule, AttentiveRegressor, AttentiveRegressorConfig, LinearBaseline};
use crate::sim::{heuristic_bundle, Deployment, DeploymentConfig, World, WorldConfig};
use crate::types::{Bundle, FeatureRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub world: WorldConfig,
    pub model: AttentiveRegressorConfig,
    pub ridge_lambda: f64,
    pub min_active_days: u32,
    /// Training rows are drawn from at most this many eligible users.
    pub max_train_users: usize,
    pub deployment: DeploymentConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            world: WorldConfig::default(),
            model: AttentiveRegressorConfig::default(),
            ridge_lambda: 1e-3,
            min_active_days: 30,
            max_train_users: 4000,
            deployment: DeploymentConfig::default(),
        }
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.deployment.validate()?;
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::validation("ridge_lambda must be >= 0"));
        }
        if self.max_train_users == 0 {
            return Err(Error::validation("max_train_users must be >= 1"));
        }
        Ok(())
    }
}

/// Which trained model backs an arm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    #[default]
    Attentive,
    Linear,
}

pub struct Lab {
    pub config: LabConfig,
    pub world: World,
    pub training_rows: Vec<FeatureRow>,
    pub attentive: AttentiveRegressor,
    pub baseline: LinearBaseline,
    /// Incumbent hand-designed bundle, also the fallback.
    pub heuristic: Bundle,
    attentive_deployment: OnceLock<Arc<Deployment>>,
    baseline_deployment: OnceLock<Arc<Deployment>>,
}

/// Training rows from a hashed subset of `users` active long enough.
pub fn training_rows(
    world: &World,
    users: impl IntoIterator<Item = usize>,
    min_active_days: u32,
    window_days: u32,
    max_users: usize,
) -> Vec<FeatureRow> {
    let mut order: Vec<usize> = users.into_iter().filter(|&u| world.users[u].days_active >= min_active_days).collect();
    crate::model::shuffle(&mut order, world.config.seed, "train-users", 0);
    order.truncate(max_users);
    order.sort_unstable();
    world.dataset(order, window_days, AggregationRule::Training { min_active_days }).rows
}

impl Lab {
    pub fn prepare(config: &LabConfig) -> Result<Self> {
        config.validate()?;
        let world = World::generate(&config.world)?;
        let rows = training_rows(&world, 0..world.n_users(), config.min_active_days, config.deployment.window_days, config.max_train_users);
        if rows.len() < 10 {
            return Err(Error::Training(format!("only {} training rows; enlarge the world", rows.len())));
        }
        let attentive = AttentiveRegressor::train(&rows, &config.model)?;
        let baseline = LinearBaseline::train(&rows, config.ridge_lambda)?;
        let heuristic = heuristic_bundle(&rows, &config.world.catalog, &config.deployment.scale_grid)?;
        Ok(Self::from_parts(config.clone(), world, rows, attentive, baseline, heuristic))
    }

    /// A lab over already trained models.
    pub fn from_parts(
        config: LabConfig,
        world: World,
        training_rows: Vec<FeatureRow>,
        attentive: AttentiveRegressor,
        baseline: LinearBaseline,
        heuristic: Bundle,
    ) -> Self {
        Lab {
            config,
            world,
            training_rows,
            attentive,
            baseline,
            heuristic,
            attentive_deployment: OnceLock::new(),
            baseline_deployment: OnceLock::new(),
        }
    }

    /// Serves `deployment` for `choice` instead of building one. Fails if a
    /// deployment was already built.
    pub fn set_deployment(&self, choice: ModelChoice, deployment: Deployment) -> Result<()> {
        let cell = match choice {
            ModelChoice::Attentive => &self.attentive_deployment,
            ModelChoice::Linear => &self.baseline_deployment,
        };
        cell.set(Arc::new(deployment)).map_err(|_| Error::domain("deployment already set"))
    }

    pub fn deployment(&self, choice: ModelChoice) -> Result<Arc<Deployment>> {
        let (cell, model): (_, &dyn crate::model::Predictor) = match choice {
            ModelChoice::Attentive => (&self.attentive_deployment, &self.attentive),
            ModelChoice::Linear => (&self.baseline_deployment, &self.baseline),
        };
        if let Some(d) = cell.get() {
            return Ok(d.clone());
        }
        let d = Arc::new(Deployment::build(&self.world, model, &self.config.deployment, 0, self.heuristic.clone())?);
        Ok(cell.get_or_init(|| d).clone())
    }
}

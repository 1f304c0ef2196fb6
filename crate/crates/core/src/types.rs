//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of item types.
pub const DEFAULT_DIM: usize = 13;

/// The purchasable item types and per-item bundle bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemCatalog {
    pub dim: usize,
    pub names: Vec<String>,
    pub min_qty: Vec<u32>,
    pub max_qty: Vec<u32>,
}

impl ItemCatalog {
    /// Catalog of `dim` items named `item_0..`, each bounded to `[min, max]`.
    pub fn uniform(dim: usize, min: u32, max: u32) -> Result<Self> {
        let cat =
            ItemCatalog { dim, names: (0..dim).map(|j| format!("item_{j}")).collect(), min_qty: vec![min; dim], max_qty: vec![max; dim] };
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::validation(format!("catalog.dim must be >= 2, got {}", self.dim)));
        }
        if self.names.len() != self.dim || self.min_qty.len() != self.dim || self.max_qty.len() != self.dim {
            return Err(Error::validation("catalog names/min_qty/max_qty must all have length dim"));
        }
        for j in 0..self.dim {
            if self.max_qty[j] < self.min_qty[j].max(1) {
                return Err(Error::validation(format!(
                    "catalog.max_qty[{j}] = {} must be >= max(1, min_qty[{j}] = {})",
                    self.max_qty[j], self.min_qty[j]
                )));
            }
        }
        Ok(())
    }
}

impl Default for ItemCatalog {
    fn default() -> Self {
        ItemCatalog::uniform(DEFAULT_DIM, 0, 50).expect("default catalog is valid")
    }
}

/// Nonnegative per-item purchase intensities. Only the direction matters to
/// every downstream consumer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceVector(Vec<f64>);

impl PreferenceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!("preference entry {j} = {v} is not a finite nonnegative value")));
        }
        Ok(PreferenceVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        PreferenceVector::new(self.0.iter().map(|v| v * k).collect())
    }
}

/// An integer-volume offer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub id: u32,
    pub volumes: Vec<u32>,
}

impl Bundle {
    pub fn new(id: u32, volumes: Vec<u32>, catalog: &ItemCatalog) -> Result<Self> {
        let b = Bundle { id, volumes };
        b.validate(catalog)?;
        Ok(b)
    }

    pub fn validate(&self, catalog: &ItemCatalog) -> Result<()> {
        if self.volumes.len() != catalog.dim {
            return Err(Error::domain(format!("bundle {} has {} volumes, catalog has {} items", self.id, self.volumes.len(), catalog.dim)));
        }
        for (j, v) in self.volumes.iter().enumerate() {
            if *v < catalog.min_qty[j] || *v > catalog.max_qty[j] {
                return Err(Error::domain(format!("bundle {} volume {j} = {v} outside catalog bounds", self.id)));
            }
        }
        if self.volumes.iter().all(|v| *v == 0) {
            return Err(Error::domain(format!("bundle {} is empty", self.id)));
        }
        Ok(())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.volumes.iter().map(|v| *v as f64).collect()
    }
}

/// The ordered set of bundles a policy may serve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BundlePool {
    bundles: Vec<Bundle>,
}

impl BundlePool {
    pub fn new(bundles: Vec<Bundle>) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::domain("bundle pool is empty"));
        }
        let mut ids: Vec<u32> = bundles.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("bundle pool ids are not unique"));
        }
        Ok(BundlePool { bundles })
    }

    pub fn bundles(&self) -> &[Bundle] {
        &self.bundles
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Bundle> {
        self.bundles.iter().find(|b| b.id == id)
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.bundles.iter().position(|b| b.id == id)
    }

    /// A new pool with `extra` appended (ids must stay unique).
    pub fn with_extra(&self, extra: &Bundle) -> Result<Self> {
        let mut bundles = self.bundles.clone();
        if !bundles.iter().any(|b| b == extra) {
            bundles.push(extra.clone());
        }
        BundlePool::new(bundles)
    }
}

/// Simulation ground truth for one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub user_id: u64,
    pub archetype_weights: Vec<f64>,
    pub activity_rate: f64,
    pub spend_scale: f64,
    pub days_active: u32,
}

impl UserRecord {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.archetype_weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.archetype_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::validation(format!("user {}: archetype weights not on the simplex", self.user_id)));
        }
        if !(0.0..=1.0).contains(&self.activity_rate) {
            return Err(Error::validation(format!("user {}: activity_rate outside [0,1]", self.user_id)));
        }
        if !(self.spend_scale > 0.0) {
            return Err(Error::validation(format!("user {}: spend_scale must be positive", self.user_id)));
        }
        Ok(())
    }
}

/// Aggregated features for one user plus the next-active-day purchase label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub user_id: u64,
    pub features: Vec<f64>,
    pub agg_days: u32,
    pub label: PreferenceVector,
}

/// Which branch of a serving policy produced an impression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    Model,
    ContaminatedRandom,
    PureRandom,
    Heuristic,
    Fallback,
}

impl PolicyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::Model => "model",
            PolicyTag::ContaminatedRandom => "contaminated_random",
            PolicyTag::PureRandom => "pure_random",
            PolicyTag::Heuristic => "heuristic",
            PolicyTag::Fallback => "fallback",
        }
    }
}

/// One impression and what the user did with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub day: u32,
    pub user_id: u64,
    pub bundle_id: u32,
    pub impression: bool,
    pub clicked: bool,
    pub taken: bool,
    pub policy_tag: PolicyTag,
}

impl EventRecord {
    /// taken ⇒ clicked ⇒ impression.
    pub fn is_consistent(&self) -> bool {
        (!self.taken || self.clicked) && (!self.clicked || self.impression)
    }

    pub fn check(&self) -> Result<()> {
        if self.is_consistent() {
            Ok(())
        } else {
            Err(Error::validation(format!("event day {} user {} violates taken => clicked => impression", self.day, self.user_id)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_bounds() {
        assert!(ItemCatalog::uniform(1, 0, 5).is_err());
        assert!(ItemCatalog::uniform(3, 0, 0).is_err());
        assert!(ItemCatalog::uniform(3, 4, 3).is_err());
        assert!(ItemCatalog::uniform(3, 2, 2).is_ok());
        assert_eq!(ItemCatalog::default().dim, 13);
    }

    #[test]
    fn preference_rejects_negative_and_nan() {
        assert!(PreferenceVector::new(vec![1.0, -0.1]).is_err());
        assert!(PreferenceVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(PreferenceVector::new(vec![0.0, 0.0]).unwrap().is_zero());
    }

    #[test]
    fn bundle_validation() {
        let cat = ItemCatalog::uniform(3, 0, 5).unwrap();
        assert!(Bundle::new(0, vec![0, 0, 0], &cat).is_err());
        assert!(Bundle::new(0, vec![6, 0, 0], &cat).is_err());
        assert!(Bundle::new(0, vec![1, 0], &cat).is_err());
        assert!(Bundle::new(0, vec![1, 2, 3], &cat).is_ok());
    }

    #[test]
    fn pool_requires_unique_ids() {
        let cat = ItemCatalog::uniform(2, 0, 5).unwrap();
        let a = Bundle::new(1, vec![1, 0], &cat).unwrap();
        let b = Bundle::new(1, vec![0, 1], &cat).unwrap();
        assert!(BundlePool::new(vec![]).is_err());
        assert!(BundlePool::new(vec![a.clone(), b]).is_err());
        assert_eq!(BundlePool::new(vec![a]).unwrap().len(), 1);
    }

    #[test]
    fn event_implication_chain() {
        let mut e =
            EventRecord { day: 0, user_id: 1, bundle_id: 2, impression: true, clicked: false, taken: true, policy_tag: PolicyTag::Model };
        assert!(e.check().is_err());
        e.clicked = true;
        assert!(e.check().is_ok());
        e.impression = false;
        assert!(e.check().is_err());
    }

    #[test]
    fn policy_tag_wire_names() {
        let s = serde_json::to_string(&PolicyTag::ContaminatedRandom).unwrap();
        assert_eq!(s, "\"contaminated_random\"");
        for tag in [PolicyTag::Model, PolicyTag::ContaminatedRandom, PolicyTag::PureRandom, PolicyTag::Heuristic, PolicyTag::Fallback] {
            assert_eq!(serde_json::to_string(&tag).unwrap(), format!("\"{}\"", tag.as_str()));
        }
    }

    #[test]
    fn user_record_simplex() {
        let mut u = UserRecord { user_id: 3, archetype_weights: vec![0.25, 0.75], activity_rate: 0.5, spend_scale: 1.0, days_active: 4 };
        assert!(u.validate().is_ok());
        u.archetype_weights = vec![0.5, 0.6];
        assert!(u.validate().is_err());
    }
}

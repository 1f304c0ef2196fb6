//! Bundle serving policies and the fallback chain.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cos_dist;
use crate::rng::RngStream;
use crate::types::{Bundle, BundlePool, PolicyTag, PreferenceVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    /// Always the nearest pool bundle.
    Model,
    /// Uniform random pool bundle with probability `contamination_p / 100`.
    Contaminated {
        contamination_p: f64,
    },
    Random,
    Heuristic {
        heuristic_bundle_id: u32,
    },
}

impl PolicyConfig {
    pub fn contaminated(p: f64) -> Result<Self> {
        let c = PolicyConfig::Contaminated { contamination_p: p };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if let PolicyConfig::Contaminated { contamination_p } = self {
            if !(0.0..=100.0).contains(contamination_p) {
                return Err(Error::validation(format!("contamination_p must be in [0, 100], got {contamination_p}")));
            }
        }
        Ok(())
    }

    /// Short label such as `T_10` or `random`.
    pub fn label(&self) -> String {
        match self {
            PolicyConfig::Model => "T_0".into(),
            PolicyConfig::Contaminated { contamination_p } => format!("T_{contamination_p}"),
            PolicyConfig::Random => "random".into(),
            PolicyConfig::Heuristic { .. } => "heuristic".into(),
        }
    }
}

/// The model pool plus the bundle served when no prediction is available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServingSet {
    pub pool: BundlePool,
    pub fallback: Bundle,
}

impl ServingSet {
    pub fn new(pool: BundlePool, fallback: Bundle) -> Result<Self> {
        if let Some(b) = pool.get(fallback.id) {
            if b != &fallback {
                return Err(Error::domain("fallback bundle id collides with a different pool bundle"));
            }
        }
        Ok(ServingSet { pool, fallback })
    }

    /// Every bundle that can be served, fallback included.
    pub fn all(&self) -> BundlePool {
        self.pool.with_extra(&self.fallback).expect("ids checked on construction")
    }

    pub fn find(&self, id: u32) -> Option<&Bundle> {
        self.pool.get(id).or((self.fallback.id == id).then_some(&self.fallback))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub bundle_id: u32,
    pub provenance: PolicyTag,
    pub d_c: Option<f64>,
}

/// Nearest pool bundle by cosine distance, lowest index on ties.
pub fn argmin_bundle(prediction: &[f64], pool: &BundlePool) -> Result<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for b in pool.bundles() {
        let d = cos_dist(prediction, &b.as_f64())?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((b.id, d));
        }
    }
    best.ok_or_else(|| Error::domain("empty pool"))
}

fn model_pick(prediction: &[f64], pool: &BundlePool) -> Result<Recommendation> {
    let (bundle_id, d) = argmin_bundle(prediction, pool)?;
    Ok(Recommendation { bundle_id, provenance: PolicyTag::Model, d_c: Some(d) })
}

fn random_pick(pool: &BundlePool, rng: &mut RngStream, provenance: PolicyTag) -> Recommendation {
    Recommendation { bundle_id: pool.bundles()[rng.below(pool.len())].id, provenance, d_c: None }
}

fn fallback_pick(serving: &ServingSet) -> Recommendation {
    Recommendation { bundle_id: serving.fallback.id, provenance: PolicyTag::Fallback, d_c: None }
}

pub fn recommend(
    prediction: Option<&PreferenceVector>,
    serving: &ServingSet,
    config: &PolicyConfig,
    rng: &mut RngStream,
) -> Result<Recommendation> {
    let pool = &serving.pool;
    match config {
        PolicyConfig::Random => Ok(random_pick(pool, rng, PolicyTag::PureRandom)),
        PolicyConfig::Heuristic { heuristic_bundle_id } => {
            if serving.find(*heuristic_bundle_id).is_none() {
                return Err(Error::domain(format!("heuristic bundle {heuristic_bundle_id} is not servable")));
            }
            Ok(Recommendation { bundle_id: *heuristic_bundle_id, provenance: PolicyTag::Heuristic, d_c: None })
        }
        PolicyConfig::Model => match prediction {
            Some(p) => model_pick(p.values(), pool),
            None => Ok(fallback_pick(serving)),
        },
        PolicyConfig::Contaminated { contamination_p } => {
            let Some(p) = prediction else { return Ok(fallback_pick(serving)) };
            let x = rng.uniform() * 100.0;
            if x < *contamination_p {
                Ok(random_pick(pool, rng, PolicyTag::ContaminatedRandom))
            } else {
                model_pick(p.values(), pool)
            }
        }
    }
}

/// One-deep per-user cache of the latest available prediction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionCache {
    latest: BTreeMap<u64, PreferenceVector>,
}

impl PredictionCache {
    pub fn store(&mut self, user_id: u64, prediction: PreferenceVector) {
        self.latest.insert(user_id, prediction);
    }

    pub fn get(&self, user_id: u64) -> Option<&PreferenceVector> {
        self.latest.get(&user_id)
    }

    /// Today's prediction when present (and cached), else the cached one.
    pub fn resolve(&mut self, user_id: u64, today: Option<PreferenceVector>) -> Option<&PreferenceVector> {
        if let Some(p) = today {
            self.store(user_id, p);
        }
        self.get(user_id)
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }
}

/// Latest cached prediction's argmin bundle, else the fallback bundle.
pub fn fallback_chain(cache: &PredictionCache, user_id: u64, serving: &ServingSet) -> Result<Recommendation> {
    match cache.get(user_id) {
        Some(p) => model_pick(p.values(), &serving.pool),
        None => Ok(fallback_pick(serving)),
    }
}

/// Writes a daily batch as `user_id,bundle_id,provenance`.
pub fn write_batch<W: Write>(out: W, batch: &[(u64, Recommendation)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "bundle_id", "provenance"])?;
    for (user, r) in batch {
        w.write_record([user.to_string(), r.bundle_id.to_string(), r.provenance.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Share of a batch served by the fallback bundle.
pub fn fallback_rate(batch: &[(u64, Recommendation)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().filter(|(_, r)| r.provenance == PolicyTag::Fallback).count() as f64 / batch.len() as f64
}

//! Preference regression: map aggregated behavioural features to a
//! nonnegative item-preference direction by minimizing cosine distance.

mod aggregate;
mod attentive;
mod linear;

pub use aggregate::{aggregate_features, AggregatedData, AggregationRule, UserHistory};
pub use attentive::{AttentiveRegressor, AttentiveRegressorConfig, FeatureImportance, LearningRateSchedule, TrainingReport};
pub use linear::LinearBaseline;

pub(crate) use aggregate::mean_rows;
pub(crate) use attentive::shuffle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cos_dist;
use crate::types::{FeatureRow, PreferenceVector};

/// Anything that maps a feature row to a preference direction.
pub trait Predictor {
    fn feature_dim(&self) -> usize;
    fn predict(&self, features: &[f64]) -> Result<PreferenceVector>;
}

/// Per-feature z-scoring fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let f = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; f];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; f];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn identity(f: usize) -> Self {
        Standardizer { mean: vec![0.0; f], std: vec![1.0; f] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

pub(crate) fn check_rows(rows: &[FeatureRow]) -> Result<(usize, usize)> {
    let first = rows.first().ok_or_else(|| Error::Training("empty dataset".into()))?;
    let (f, d) = (first.features.len(), first.label.len());
    for r in rows {
        if r.features.len() != f || r.label.len() != d {
            return Err(Error::Training(format!("user {}: inconsistent row shape", r.user_id)));
        }
        if r.label.is_zero() {
            return Err(Error::Training(format!("user {}: all-zero label", r.user_id)));
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("user {}: non-finite feature", r.user_id)));
        }
    }
    Ok((f, d))
}

/// Mean cosine distance between labels and predictions over `rows`.
pub fn mean_cos_dist(model: &dyn Predictor, rows: &[FeatureRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::domain("mean cosine distance of an empty set"));
    }
    let mut acc = 0.0;
    for r in rows {
        let p = model.predict(&r.features)?;
        acc += cos_dist(r.label.values(), p.values())?;
    }
    Ok(acc / rows.len() as f64)
}

/// A predictor that always returns the same direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantPredictor {
    pub feature_dim: usize,
    pub direction: PreferenceVector,
}

impl ConstantPredictor {
    /// The normalized mean of the normalized labels.
    pub fn mean_direction(rows: &[FeatureRow]) -> Result<Self> {
        let (f, d) = check_rows(rows)?;
        let mut acc = vec![0.0; d];
        for r in rows {
            let n = crate::geometry::normalize(r.label.values())?;
            acc.iter_mut().zip(n).for_each(|(a, v)| *a += v);
        }
        Ok(ConstantPredictor { feature_dim: f, direction: PreferenceVector::new(crate::geometry::normalize(&acc)?)? })
    }
}

impl Predictor for ConstantPredictor {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn predict(&self, features: &[f64]) -> Result<PreferenceVector> {
        if features.len() != self.feature_dim {
            return Err(Error::domain("feature length mismatch"));
        }
        Ok(self.direction.clone())
    }
}

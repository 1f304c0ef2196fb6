//! Offline scoring of a predictor on held-out rows.

use crate::error::{Error, Result};
use crate::geometry::cos_dist;
use crate::model::{mean_cos_dist, Predictor};
use crate::types::FeatureRow;

/// Mean cosine distance between held-out labels and predictions.
pub fn offline_eval(model: &dyn Predictor, test: &[FeatureRow]) -> Result<f64> {
    if let Some(r) = test.iter().find(|r| r.label.is_zero()) {
        return Err(Error::domain(format!("user {}: all-zero label in evaluation set", r.user_id)));
    }
    mean_cos_dist(model, test)
}

/// Relative growth of the mean cosine distance when item `item` is removed
/// from both labels and predictions: `(reduced - full) / full`. A dominant
/// item that the model fits well makes the full-vector score look better
/// than it is; a large positive value flags that.
///
/// Rows whose label or prediction is all zero once the item is removed are
/// left out of both means.
pub fn target_imbalance_probe(model: &dyn Predictor, test: &[FeatureRow], item: usize) -> Result<f64> {
    let mut full = 0.0;
    let mut reduced = 0.0;
    let mut n = 0usize;
    if test.first().is_some_and(|r| r.label.len() < 2) {
        return Err(Error::domain("probe needs at least two items"));
    }
    for r in test {
        if item >= r.label.len() {
            return Err(Error::domain(format!("item {item} out of range")));
        }
        let p = model.predict(&r.features)?;
        let drop = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().filter(|(j, _)| *j != item).map(|(_, x)| *x).collect() };
        let (lr, pr) = (drop(r.label.values()), drop(p.values()));
        if lr.iter().all(|v| *v == 0.0) || pr.iter().all(|v| *v == 0.0) {
            continue;
        }
        full += cos_dist(r.label.values(), p.values())?;
        reduced += cos_dist(&lr, &pr)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain("no rows left after removing the item"));
    }
    if full == 0.0 {
        return Ok(if reduced == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((reduced - full) / full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstantPredictor;
    use crate::types::PreferenceVector;

    fn row(label: Vec<f64>) -> FeatureRow {
        FeatureRow { user_id: 0, features: vec![0.0], agg_days: 1, label: PreferenceVector::new(label).unwrap() }
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let m = ConstantPredictor { feature_dim: 1, direction: PreferenceVector::new(vec![1.0, 2.0, 0.0]).unwrap() };
        let rows = vec![row(vec![2.0, 4.0, 0.0]), row(vec![0.5, 1.0, 0.0])];
        assert!(offline_eval(&m, &rows).unwrap().abs() < 1e-12);
        assert!(offline_eval(&m, &[]).is_err());
    }

    #[test]
    fn zero_coordinate_probe_is_exactly_zero() {
        let m = ConstantPredictor { feature_dim: 1, direction: PreferenceVector::new(vec![1.0, 0.3, 0.0]).unwrap() };
        let rows = vec![row(vec![0.2, 1.0, 0.0]), row(vec![1.0, 1.0, 0.0])];
        assert_eq!(target_imbalance_probe(&m, &rows, 2).unwrap(), 0.0);
    }

    #[test]
    fn dominant_item_inflates_score() {
        // Large shared item 0 hides disagreement on the others.
        let m = ConstantPredictor { feature_dim: 1, direction: PreferenceVector::new(vec![10.0, 1.0, 0.0]).unwrap() };
        let rows = vec![row(vec![10.0, 0.0, 1.0]), row(vec![10.0, 0.0, 2.0])];
        let gap = target_imbalance_probe(&m, &rows, 0).unwrap();
        assert!(gap > 0.5, "{gap}");
    }
}

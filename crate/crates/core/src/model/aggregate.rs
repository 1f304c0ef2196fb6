//! N-day feature aggregation.

use serde::{Deserialize, Serialize};

use crate::types::{FeatureRow, PreferenceVector};

/// A user's chronological per-active-day feature rows and the purchase
/// vector observed on the following active day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: u64,
    pub days_active: u32,
    /// The most recent active days, oldest first. May be shorter than
    /// `days_active` when older rows were not kept.
    pub daily: Vec<Vec<f64>>,
    pub label: PreferenceVector,
}

impl UserHistory {
    /// History holding every active day.
    pub fn complete(user_id: u64, daily: Vec<Vec<f64>>, label: PreferenceVector) -> Self {
        UserHistory { user_id, days_active: daily.len() as u32, daily, label }
    }
}

/// Which users become rows, and over how many days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationRule {
    /// Keep only users active on at least `min_active_days` days; average the
    /// last N days.
    Training { min_active_days: u32 },
    /// Keep everyone; average over `min(N, days_active)` days.
    Evaluation,
}

/// Aggregated rows plus what was dropped on the way.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregatedData {
    pub rows: Vec<FeatureRow>,
    /// Users whose label was all zeros (cosine undefined).
    pub excluded_zero_labels: usize,
    /// Users below the training activity threshold, or with no history.
    pub excluded_inactive: usize,
}

/// Averages each user's most recent `n` active days.
pub fn aggregate_features(histories: &[UserHistory], n: u32, rule: AggregationRule) -> AggregatedData {
    assert!(n >= 1, "aggregation window must be at least one day");
    let mut out = AggregatedData::default();
    for h in histories {
        let days = h.days_active as usize;
        let keep = match rule {
            AggregationRule::Training { min_active_days } => days >= min_active_days as usize && days > 0,
            AggregationRule::Evaluation => days > 0,
        } && !h.daily.is_empty();
        if !keep {
            out.excluded_inactive += 1;
            continue;
        }
        if h.label.is_zero() {
            out.excluded_zero_labels += 1;
            continue;
        }
        let kept = h.daily.len();
        let window = (n as usize).min(days).min(kept);
        out.rows.push(FeatureRow {
            user_id: h.user_id,
            features: mean_rows(&h.daily[kept - window..]),
            agg_days: window as u32,
            label: h.label.clone(),
        });
    }
    out
}

pub(crate) fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let f = rows[0].len();
    let mut acc = vec![0.0; f];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let k = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}

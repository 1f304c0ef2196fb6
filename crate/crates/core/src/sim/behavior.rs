//! Click and take probabilities, and the novelty boost of fresh bundles.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorModel {
    pub take_intercept: f64,
    pub take_slope: f64,
    pub click_intercept: f64,
    pub click_slope: f64,
    /// Extra engagement on first exposure, as a fraction.
    pub novelty_amplitude: f64,
    pub novelty_tau: f64,
    /// Log-normal noise on purchased quantities after a take.
    pub purchase_noise_sd: f64,
    /// How much of a take's quantity follows the user's own taste rather than
    /// the bundle, as a fraction of the bundle total.
    pub taste_pull: f64,
}

impl Default for BehaviorModel {
    fn default() -> Self {
        BehaviorModel {
            take_intercept: -5.0,
            take_slope: 4.0,
            click_intercept: -3.5,
            click_slope: 3.5,
            novelty_amplitude: 0.5,
            novelty_tau: 5.0,
            purchase_noise_sd: 0.3,
            taste_pull: 0.1,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl BehaviorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.novelty_amplitude >= 0.0) {
            return Err(Error::validation("behavior.novelty_amplitude must be >= 0"));
        }
        if !(self.novelty_tau > 0.0) {
            return Err(Error::validation("behavior.novelty_tau must be > 0"));
        }
        if !(self.purchase_noise_sd >= 0.0) || !(self.taste_pull >= 0.0) {
            return Err(Error::validation("behavior.purchase_noise_sd and taste_pull must be >= 0"));
        }
        let finite = [self.take_intercept, self.take_slope, self.click_intercept, self.click_slope];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("behavior slopes and intercepts must be finite"));
        }
        Ok(())
    }

    /// Take probability at relevance `cos_sim` under novelty multiplier `m`.
    pub fn take_prob(&self, cos_sim: f64, m: f64) -> f64 {
        (sigmoid(self.take_intercept + self.take_slope * cos_sim) * m).min(1.0)
    }

    /// Click probability; never below the take probability.
    pub fn click_prob(&self, cos_sim: f64, m: f64) -> f64 {
        (sigmoid(self.click_intercept + self.click_slope * cos_sim) * m).min(1.0).max(self.take_prob(cos_sim, m))
    }

    pub fn novelty_multiplier(&self, days_since_first: f64) -> f64 {
        1.0 + self.novelty_amplitude * (-days_since_first.max(0.0) / self.novelty_tau).exp()
    }
}

/// First-exposure day per (group, bundle). Bundles marked familiar never
/// carry a novelty boost.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoveltyState {
    first_exposure: BTreeMap<(usize, u32), u32>,
    familiar: BTreeSet<u32>,
}

impl NoveltyState {
    pub fn mark_familiar(&mut self, bundle_id: u32) {
        self.familiar.insert(bundle_id);
    }

    /// Multiplier for `bundle_id` shown to `group` on `day`, recording the
    /// exposure if it is the first.
    pub fn expose(&mut self, behavior: &BehaviorModel, group: usize, bundle_id: u32, day: u32) -> f64 {
        if self.familiar.contains(&bundle_id) {
            return 1.0;
        }
        let first = *self.first_exposure.entry((group, bundle_id)).or_insert(day);
        behavior.novelty_multiplier(f64::from(day.saturating_sub(first)))
    }

    pub fn first_exposure(&self, group: usize, bundle_id: u32) -> Option<u32> {
        self.first_exposure.get(&(group, bundle_id)).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_are_ordered_and_monotone() {
        let b = BehaviorModel::default();
        let mut last = 0.0;
        for i in 0..=20 {
            let s = i as f64 / 20.0;
            for m in [1.0, 1.4, 1.8] {
                let (t, c) = (b.take_prob(s, m), b.click_prob(s, m));
                assert!((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&c) && c >= t);
            }
            let t = b.take_prob(s, 1.0);
            assert!(t > last);
            last = t;
        }
        assert!(b.take_prob(1.0, 1.0) > b.take_prob(0.0, 1.0));
    }

    #[test]
    fn novelty_decays() {
        let b = BehaviorModel::default();
        assert!((b.novelty_multiplier(0.0) - 1.0 - b.novelty_amplitude).abs() < 1e-12);
        assert!(b.novelty_multiplier(3.0 * b.novelty_tau) < 1.05);
        let mut prev = f64::INFINITY;
        for d in 0..60 {
            let m = b.novelty_multiplier(d as f64);
            assert!(m >= 1.0 && m <= prev);
            prev = m;
        }
    }

    #[test]
    fn exposure_tracking_per_group() {
        let b = BehaviorModel::default();
        let mut s = NoveltyState::default();
        s.mark_familiar(7);
        assert_eq!(s.expose(&b, 0, 7, 0), 1.0);
        let m0 = s.expose(&b, 0, 1, 3);
        let m1 = s.expose(&b, 0, 1, 8);
        assert!(m0 > m1);
        assert_eq!(s.first_exposure(0, 1), Some(3));
        // another group sees it fresh
        assert_eq!(s.expose(&b, 1, 1, 8), m0);
    }
}

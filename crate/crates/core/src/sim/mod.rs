//! Synthetic players: latent preferences, daily behavioural features,
//! purchase labels, and the day-by-day response to served bundles.

mod behavior;
mod day;
mod deploy;
mod feedback;

pub use behavior::{BehaviorModel, NoveltyState};
pub use day::{assign_groups, step_day, write_events_jsonl, Arm, DayOutcome, Purchase};
pub use deploy::{heuristic_bundle, Deployment, DeploymentConfig, HEURISTIC_BUNDLE_ID};
pub use feedback::{run_feedback_loop, FeedbackConfig, FeedbackReport};

use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_dist, normalize};
use crate::model::{aggregate_features, mean_rows, AggregatedData, AggregationRule, UserHistory};
use crate::rng::{day_user_index, derive_stream, RngStream};
use crate::types::{ItemCatalog, PreferenceVector, UserRecord};

/// An item bought heavily and noisily by everyone, independent of taste.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominantItem {
    pub index: usize,
    /// Mean extra quantity relative to the base label quantity.
    pub weight: f64,
    pub noise_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_users: usize,
    pub catalog: ItemCatalog,
    pub n_archetypes: usize,
    /// Explicit archetypes; generated from the seed when absent.
    pub archetype_directions: Option<Vec<Vec<f64>>>,
    /// Dirichlet concentration of each user's archetype mixture.
    pub archetype_concentration: f64,
    pub dominant_item: Option<DominantItem>,
    pub feature_noise_sd: f64,
    pub n_interactions: usize,
    pub n_distractors: usize,
    pub activity_beta: [f64; 2],
    pub max_history_days: u32,
    pub new_user_fraction: f64,
    pub spend_log_sd: f64,
    /// Expected total items in a next-day purchase, before spend scaling.
    pub label_quantity: f64,
    pub label_noise_sd: f64,
    pub behavior: BehaviorModel,
    /// Days served by the feedback loop.
    pub horizon_days: u32,
    /// Feedback-loop retraining period; values above the horizon disable it.
    pub retrain_every: u32,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_users: 5000,
            catalog: ItemCatalog::default(),
            n_archetypes: 6,
            archetype_directions: None,
            archetype_concentration: 0.3,
            dominant_item: None,
            feature_noise_sd: 2.0,
            n_interactions: 4,
            n_distractors: 3,
            activity_beta: [2.0, 2.0],
            max_history_days: 60,
            new_user_fraction: 0.05,
            spend_log_sd: 0.8,
            label_quantity: 20.0,
            label_noise_sd: 0.3,
            behavior: BehaviorModel::default(),
            horizon_days: 120,
            retrain_every: 7,
            seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn feature_dim(&self) -> usize {
        self.catalog.dim + 2 + self.n_interactions + self.n_distractors
    }

    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        let bad = |msg: &str| Err(Error::validation(format!("world: {msg}")));
        if self.n_users == 0 {
            return bad("n_users must be >= 1");
        }
        if self.n_archetypes == 0 {
            return bad("n_archetypes must be >= 1");
        }
        if !(self.archetype_concentration > 0.0) {
            return bad("archetype_concentration must be > 0");
        }
        if !(self.feature_noise_sd >= 0.0) || !(self.label_noise_sd >= 0.0) || !(self.spend_log_sd >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if !(self.activity_beta[0] > 0.0 && self.activity_beta[1] > 0.0) {
            return bad("activity_beta parameters must be > 0");
        }
        if !(0.0..=1.0).contains(&self.new_user_fraction) {
            return bad("new_user_fraction must be in [0, 1]");
        }
        if !(self.label_quantity > 0.0) {
            return bad("label_quantity must be > 0");
        }
        if self.max_history_days == 0 {
            return bad("max_history_days must be >= 1");
        }
        if self.n_interactions > 0 && self.catalog.dim < 2 {
            return bad("interactions need at least two items");
        }
        if let Some(d) = &self.dominant_item {
            if d.index >= self.catalog.dim || !(d.weight >= 0.0) || !(d.noise_sd >= 0.0) {
                return bad("dominant_item out of range");
            }
        }
        if let Some(dirs) = &self.archetype_directions {
            if dirs.len() != self.n_archetypes {
                return bad("archetype_directions must have n_archetypes entries");
            }
            if dirs.iter().any(|d| d.len() != self.catalog.dim || d.iter().any(|v| !(*v >= 0.0))) {
                return bad("archetype_directions must be nonnegative vectors of length catalog.dim");
            }
        }
        if self.retrain_every == 0 || self.horizon_days == 0 {
            return bad("horizon_days and retrain_every must be >= 1");
        }
        self.behavior.validate()
    }
}

/// Generated population plus everything needed to draw its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub archetypes: Vec<Vec<f64>>,
    pub users: Vec<UserRecord>,
    /// Unit-norm latent preference per user.
    pub latents: Vec<PreferenceVector>,
    pub interaction_pairs: Vec<(usize, usize)>,
}

fn gen_archetypes(config: &WorldConfig, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    let d = config.catalog.dim;
    if let Some(dirs) = &config.archetype_directions {
        return dirs.iter().map(|v| normalize(v)).collect();
    }
    // Each archetype concentrates on a few items; focus sets rotate through
    // the catalog so item coverage stays balanced.
    let focus = (d / config.n_archetypes.max(1)).clamp(2, 4);
    let mut out: Vec<Vec<f64>> = Vec::new();
    for l in 0..config.n_archetypes {
        for _attempt in 0..1000 {
            let mut v: Vec<f64> = (0..d).map(|_| 0.05 * rng.uniform()).collect();
            let start = (l * d) / config.n_archetypes;
            for f in 0..focus {
                v[(start + f) % d] += 0.5 + rng.uniform();
            }
            let v = normalize(&v)?;
            if out.iter().all(|o| angular_dist(o, &v).map(|a| a > 0.2).unwrap_or(false)) {
                out.push(v);
                break;
            }
        }
        if out.len() != l + 1 {
            return Err(Error::domain("could not place archetypes 0.2 rad apart"));
        }
    }
    Ok(out)
}

fn dirichlet(alpha: f64, l: usize, rng: &mut RngStream) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("alpha validated");
    loop {
        let draws: Vec<f64> = (0..l).map(|_| g.sample(rng)).collect();
        let s: f64 = draws.iter().sum();
        if s > 0.0 {
            return draws.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Builds the population: archetypes, per-user mixtures, activity, spend.
pub fn gen_population(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = derive_stream(config.seed, "archetypes", 0);
    let archetypes = gen_archetypes(config, &mut rng)?;
    let d = config.catalog.dim;
    let mut pairs = Vec::with_capacity(config.n_interactions);
    for i in 0..config.n_interactions {
        let a = (2 * i) % d;
        let b = (a + 1 + i / d) % d;
        pairs.push((a, if b == a { (a + 1) % d } else { b }));
    }
    let n_new = (config.new_user_fraction * config.n_users as f64).floor() as usize;
    let mut order: Vec<usize> = (0..config.n_users).collect();
    crate::model::shuffle(&mut order, config.seed, "new-users", 0);
    let mut is_new = vec![false; config.n_users];
    order[..n_new].iter().for_each(|&i| is_new[i] = true);

    let beta = Beta::new(config.activity_beta[0], config.activity_beta[1]).map_err(|e| Error::validation(e.to_string()))?;
    let mut users = Vec::with_capacity(config.n_users);
    let mut latents = Vec::with_capacity(config.n_users);
    for u in 0..config.n_users {
        let mut rng = derive_stream(config.seed, "user", u as u64);
        let w = dirichlet(config.archetype_concentration, archetypes.len(), &mut rng);
        let mut latent = vec![0.0; d];
        for (wl, a) in w.iter().zip(&archetypes) {
            latent.iter_mut().zip(a).for_each(|(x, v)| *x += wl * v);
        }
        let activity_rate = beta.sample(&mut rng);
        let spend_scale = (config.spend_log_sd * rng.normal()).exp();
        let days_active = if is_new[u] { 0 } else { 1 + rng.below(config.max_history_days as usize) as u32 };
        let rec = UserRecord { user_id: u as u64, archetype_weights: w, activity_rate, spend_scale, days_active };
        rec.validate()?;
        users.push(rec);
        latents.push(PreferenceVector::new(normalize(&latent)?)?);
    }
    Ok(World { config: config.clone(), archetypes, users, latents, interaction_pairs: pairs })
}

impl World {
    pub fn generate(config: &WorldConfig) -> Result<Self> {
        gen_population(config)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn dim(&self) -> usize {
        self.config.catalog.dim
    }

    /// Noise-free feature map of a user.
    pub fn clean_features(&self, user: usize) -> Vec<f64> {
        let u = &self.users[user];
        let p = self.latents[user].values();
        let s = u.spend_scale;
        let mut f = Vec::with_capacity(self.config.feature_dim());
        f.extend(p.iter().map(|v| 4.0 * s * v * v));
        f.push(4.0 * u.activity_rate);
        f.push(s.ln());
        f.extend(self.interaction_pairs.iter().map(|&(a, b)| 4.0 * s * p[a] * p[b]));
        f.extend(std::iter::repeat_n(0.0, self.config.n_distractors));
        f
    }

    /// One day of behavioural features: the clean map plus Gaussian noise.
    pub fn gen_features(&self, user: usize, rng: &mut RngStream) -> Vec<f64> {
        let sd = self.config.feature_noise_sd;
        self.clean_features(user).into_iter().map(|v| v + sd * rng.normal()).collect()
    }

    /// Feature row for the user's `index`-th active day.
    pub fn day_row(&self, user: usize, index: u32) -> Vec<f64> {
        let mut rng = derive_stream(self.config.seed, "history", day_user_index(index, user as u64));
        self.gen_features(user, &mut rng)
    }

    /// Mean of the most recent `min(n, days)` rows as of `extra_days` active
    /// days after the offline snapshot. `None` for users with no activity.
    pub fn aggregated_features(&self, user: usize, n: u32, extra_days: u32) -> Option<(Vec<f64>, u32)> {
        let days = self.users[user].days_active + extra_days;
        if days == 0 {
            return None;
        }
        let window = n.min(days);
        let rows: Vec<Vec<f64>> = (days - window..days).map(|i| self.day_row(user, i)).collect();
        Some((mean_rows(&rows), window))
    }

    /// Next-active-day purchase quantities.
    pub fn gen_label(&self, user: usize, rng: &mut RngStream) -> PreferenceVector {
        let c = &self.config;
        let q = c.label_quantity * self.users[user].spend_scale;
        let sd = c.label_noise_sd;
        let mut y: Vec<f64> =
            self.latents[user].values().iter().map(|p| (q * p * (sd * rng.normal() - 0.5 * sd * sd).exp()).round()).collect();
        if let Some(dom) = &c.dominant_item {
            let extra = q * dom.weight * (dom.noise_sd * rng.normal() - 0.5 * dom.noise_sd * dom.noise_sd).exp();
            y[dom.index] += extra.round();
        }
        PreferenceVector::new(y).expect("rounded nonnegative quantities")
    }

    /// Offline histories, keeping at most `keep_days` recent rows per user.
    pub fn histories(&self, keep_days: u32, users: impl IntoIterator<Item = usize>) -> Vec<UserHistory> {
        users
            .into_iter()
            .map(|u| {
                let days = self.users[u].days_active;
                let from = days.saturating_sub(keep_days);
                let daily = (from..days).map(|i| self.day_row(u, i)).collect();
                let mut rng = derive_stream(self.config.seed, "label", u as u64);
                UserHistory { user_id: u as u64, days_active: days, daily, label: self.gen_label(u, &mut rng) }
            })
            .collect()
    }

    /// Offline dataset over `users` with `n`-day aggregation.
    pub fn dataset(&self, users: impl IntoIterator<Item = usize>, n: u32, rule: AggregationRule) -> AggregatedData {
        aggregate_features(&self.histories(n, users), n, rule)
    }

    /// Deterministic split of user indices into (train, test) by hashed id.
    pub fn split_users(&self, test_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let salt = format!("split-{}", self.config.seed);
        (0..self.n_users()).partition(|&u| crate::rng::stable_unit(&salt, u as u64) >= test_fraction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::fit_kmeans;
    use crate::geometry::cos_dist;

    fn small(n: usize) -> WorldConfig {
        WorldConfig { n_users: n, ..WorldConfig::default() }
    }

    #[test]
    fn single_archetype_world() {
        let cfg = WorldConfig { n_archetypes: 1, ..small(50) };
        let w = World::generate(&cfg).unwrap();
        for l in &w.latents {
            assert!(cos_dist(l.values(), &w.archetypes[0]).unwrap() < 1e-12);
        }
    }

    #[test]
    fn latents_are_diverse_and_archetypes_separated() {
        let w = World::generate(&small(200)).unwrap();
        let mut acc = 0.0;
        for i in 0..50 {
            acc += cos_dist(w.latents[i].values(), w.latents[i + 50].values()).unwrap();
        }
        assert!(acc > 0.0);
        for (i, a) in w.archetypes.iter().enumerate() {
            for b in &w.archetypes[i + 1..] {
                assert!(angular_dist(a, b).unwrap() > 0.2);
            }
        }
    }

    #[test]
    fn kmeans_recovers_archetypes_from_pure_latents() {
        // Near-pure mixtures: tiny concentration puts almost all mass on one archetype.
        let cfg = WorldConfig { archetype_concentration: 0.01, ..small(600) };
        let w = World::generate(&cfg).unwrap();
        let m = fit_kmeans(&w.latents, cfg.n_archetypes, 3, 100, 1e-10).unwrap();
        for a in &w.archetypes {
            let best = m.centroids.iter().map(|c| angular_dist(a, c).unwrap()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "archetype not recovered: {best}");
        }
    }

    #[test]
    fn features_are_deterministic_and_noise_free_when_asked() {
        let cfg = WorldConfig { feature_noise_sd: 0.0, ..small(20) };
        let w = World::generate(&cfg).unwrap();
        assert_eq!(w.day_row(3, 0), w.day_row(3, 17));
        assert_eq!(w.day_row(3, 0).len(), cfg.feature_dim());
        let noisy = World::generate(&small(20)).unwrap();
        assert_ne!(noisy.day_row(3, 0), noisy.day_row(3, 1));
        assert_eq!(noisy.day_row(3, 1), noisy.day_row(3, 1));
        assert_eq!(World::generate(&small(20)).unwrap(), noisy);
    }

    #[test]
    fn new_user_fraction_is_respected() {
        let w = World::generate(&small(1000)).unwrap();
        let new = w.users.iter().filter(|u| u.days_active == 0).count();
        assert_eq!(new, 50);
        let (_, test) = w.split_users(0.2);
        let data = w.dataset(test.iter().copied(), 30, AggregationRule::Evaluation);
        assert!(data.rows.iter().all(|r| r.agg_days >= 1 && r.agg_days <= 30));
        assert!(data.excluded_inactive > 0);
    }

    #[test]
    fn aggregated_features_match_history_path() {
        let w = World::generate(&small(30)).unwrap();
        for u in 0..30 {
            let hist = w.histories(15, [u]);
            let agg = aggregate_features(&hist, 15, AggregationRule::Evaluation);
            match w.aggregated_features(u, 15, 0) {
                Some((f, n)) => {
                    if let Some(row) = agg.rows.first() {
                        assert_eq!(row.features, f);
                        assert_eq!(row.agg_days, n);
                    }
                }
                None => assert!(agg.rows.is_empty()),
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(WorldConfig { n_users: 0, ..small(1) }.validate().is_err());
        assert!(WorldConfig { new_user_fraction: 1.5, ..small(1) }.validate().is_err());
        let mut c = small(1);
        c.behavior.novelty_amplitude = -1.0;
        assert!(c.validate().is_err());
    }
}

//! Small statistics toolkit: bootstrap, trend tests, decay fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// Per-user totals of the five tracked quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserTotals {
    pub impressions: f64,
    pub clicks: f64,
    pub takes: f64,
    /// Sum over takes of the taken bundle's distance to the reference.
    pub rd_sum: f64,
}

impl UserTotals {
    pub fn add(&mut self, o: &UserTotals) {
        self.impressions += o.impressions;
        self.clicks += o.clicks;
        self.takes += o.takes;
        self.rd_sum += o.rd_sum;
    }
}

/// The five metrics compared between groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "AV")]
    Av,
    #[serde(rename = "CV")]
    Cv,
    #[serde(rename = "TR")]
    Tr,
    #[serde(rename = "CR")]
    Cr,
    #[serde(rename = "RD")]
    Rd,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Av, Metric::Cv, Metric::Tr, Metric::Cr, Metric::Rd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Av => "AV",
            Metric::Cv => "CV",
            Metric::Tr => "TR",
            Metric::Cr => "CR",
            Metric::Rd => "RD",
        }
    }

    /// (numerator, denominator) of the metric for a group total over `n`
    /// users. Volumes are per capita; rates are per impression; RD is per take.
    pub fn parts(self, t: &UserTotals, n: f64) -> (f64, f64) {
        match self {
            Metric::Av => (t.takes, n),
            Metric::Cv => (t.clicks, n),
            Metric::Tr => (t.takes, t.impressions),
            Metric::Cr => (t.clicks, t.impressions),
            Metric::Rd => (t.rd_sum, t.takes),
        }
    }
}

fn sum_totals(users: &[UserTotals]) -> UserTotals {
    let mut acc = UserTotals::default();
    users.iter().for_each(|u| acc.add(u));
    acc
}

fn uplift_pct(metric: Metric, t: &UserTotals, nt: f64, c: &UserTotals, nc: f64) -> Option<f64> {
    let (tn, td) = metric.parts(t, nt);
    let (cn, cd) = metric.parts(c, nc);
    if td <= 0.0 || cd <= 0.0 || cn <= 0.0 {
        return None;
    }
    Some(100.0 * ((tn / td) / (cn / cd) - 1.0))
}

/// Bootstrap distribution summary of one metric's uplift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub se: f64,
    pub prob_positive: f64,
    pub resamples: usize,
}

/// Resamples users within each group and summarizes every metric's uplift.
pub fn bootstrap_uplifts(
    treatment: &[UserTotals],
    control: &[UserTotals],
    metrics: &[Metric],
    resamples: usize,
    seed: u64,
) -> Result<Vec<BootstrapSummary>> {
    if treatment.is_empty() || control.is_empty() || resamples < 2 {
        return Err(Error::domain("bootstrap needs two nonempty groups and >= 2 resamples"));
    }
    let mut rng = derive_stream(seed, "bootstrap", 0);
    let (nt, nc) = (treatment.len() as f64, control.len() as f64);
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); metrics.len()];
    for _ in 0..resamples {
        let mut t = UserTotals::default();
        for _ in 0..treatment.len() {
            t.add(&treatment[rng.below(treatment.len())]);
        }
        let mut c = UserTotals::default();
        for _ in 0..control.len() {
            c.add(&control[rng.below(control.len())]);
        }
        for (m, d) in metrics.iter().zip(draws.iter_mut()) {
            if let Some(u) = uplift_pct(*m, &t, nt, &c, nc) {
                d.push(u);
            }
        }
    }
    Ok(draws
        .into_iter()
        .map(|d| {
            if d.len() < 2 {
                return BootstrapSummary { se: f64::NAN, prob_positive: f64::NAN, resamples: d.len() };
            }
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (d.len() - 1) as f64;
            let pos = d.iter().filter(|x| **x > 0.0).count() as f64 / d.len() as f64;
            BootstrapSummary { se: var.sqrt(), prob_positive: pos, resamples: d.len() }
        })
        .collect())
}

/// Point uplift of `metric` between two groups of per-user totals.
pub fn group_uplift(metric: Metric, treatment: &[UserTotals], control: &[UserTotals]) -> Option<f64> {
    uplift_pct(metric, &sum_totals(treatment), treatment.len() as f64, &sum_totals(control), control.len() as f64)
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every treatment is confidently better than control.
    Positive,
    /// Every treatment is confidently worse than control.
    Futility,
    MaxDays,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingRule {
    pub min_days: u32,
    pub max_days: u32,
    pub confidence: f64,
    pub resamples: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule { min_days: 14, max_days: 42, confidence: 0.8, resamples: 2000 }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.min_days && self.min_days <= self.max_days) {
            return Err(Error::validation("stopping: need 1 <= min_days <= max_days"));
        }
        if !(0.5..1.0).contains(&self.confidence) {
            return Err(Error::validation("stopping: confidence must be in [0.5, 1)"));
        }
        if self.resamples < 2 {
            return Err(Error::validation("stopping: resamples must be >= 2"));
        }
        Ok(())
    }

    /// Decision after `days_run` complete days given each treatment's
    /// bootstrap `P(uplift > 0)` on the primary metric.
    pub fn decide(&self, days_run: u32, prob_positive: &[f64]) -> Option<StopReason> {
        if days_run >= self.max_days {
            return Some(StopReason::MaxDays);
        }
        if days_run < self.min_days || prob_positive.is_empty() {
            return None;
        }
        if prob_positive.iter().all(|p| *p >= self.confidence) {
            return Some(StopReason::Positive);
        }
        if prob_positive.iter().all(|p| *p <= 1.0 - self.confidence) {
            return Some(StopReason::Futility);
        }
        None
    }
}

/// Bootstrap `P(mean > 0)` of paired per-user deltas.
pub fn prob_mean_positive(deltas: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if deltas.is_empty() || resamples == 0 {
        return Err(Error::domain("prob_mean_positive needs data and resamples"));
    }
    let mut rng = derive_stream(seed, "bootstrap-deltas", 0);
    let mut pos = 0usize;
    for _ in 0..resamples {
        let s: f64 = (0..deltas.len()).map(|_| deltas[rng.below(deltas.len())]).sum();
        if s > 0.0 {
            pos += 1;
        }
    }
    Ok(pos as f64 / resamples as f64)
}

/// Mann-Kendall trend test without tie correction beyond the variance term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannKendall {
    pub s: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// One-sided p-value for a decreasing trend.
    pub p_decreasing: f64,
}

pub fn mann_kendall(series: &[f64]) -> Result<MannKendall> {
    let n = series.len();
    if n < 3 {
        return Err(Error::domain("Mann-Kendall needs at least 3 points"));
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (series[j] - series[i]).signum() * f64::from(series[j] != series[i]);
        }
    }
    // tie groups
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let z = if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::standard();
    Ok(MannKendall { s, z, p_value: 2.0 * (1.0 - normal.cdf(z.abs())), p_decreasing: normal.cdf(z) })
}

/// Ordinary least-squares line with a 95% confidence interval on the slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SlopeFit {
    pub fn ci_contains_zero(&self) -> bool {
        self.ci_low <= 0.0 && 0.0 <= self.ci_high
    }
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::domain("slope fit needs >= 3 paired points"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("slope fit needs varying x"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::domain(e.to_string()))?.inverse_cdf(0.975);
    Ok(SlopeFit { slope, intercept, ci_low: slope - t * se, ci_high: slope + t * se })
}

/// Slope of `series` against its index.
pub fn series_slope(series: &[f64]) -> Result<SlopeFit> {
    let x: Vec<f64> = (0..series.len()).map(|i| i as f64).collect();
    ols_slope(&x, series)
}

/// Fit of `y(t) = level * (1 + amplitude * exp(-t / tau))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub level: f64,
    pub amplitude: f64,
    pub tau: f64,
    pub sse: f64,
}

impl DecayFit {
    pub fn multiplier(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (-t / self.tau).exp()
    }
}

/// Profile least squares: a log-spaced grid over tau, closed-form linear
/// fit of level and level * amplitude at each.
pub fn fit_decay(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::domain("decay fit needs >= 3 paired points"));
    }
    let mut best: Option<DecayFit> = None;
    let steps = 2000;
    let (lo, hi) = (0.1f64.ln(), 200f64.ln());
    for i in 0..=steps {
        let tau = (lo + (hi - lo) * i as f64 / steps as f64).exp();
        let e: Vec<f64> = t.iter().map(|v| (-v / tau).exp()).collect();
        let Ok(fit) = ols_slope(&e, y) else { continue };
        let (alpha, beta) = (fit.intercept, fit.slope);
        let sse: f64 = e.iter().zip(y).map(|(a, b)| (b - alpha - beta * a).powi(2)).sum();
        if best.is_none_or(|b| sse < b.sse) && alpha != 0.0 {
            best = Some(DecayFit { level: alpha, amplitude: beta / alpha, tau, sse });
        }
    }
    best.ok_or_else(|| Error::domain("decay fit failed"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn totals(takes: f64, clicks: f64) -> UserTotals {
        UserTotals { impressions: 1.0, clicks, takes, rd_sum: takes * 0.3 }
    }

    #[test]
    fn group_uplift_matches_formula() {
        let t = vec![totals(1.0, 1.0); 10];
        let mut c = vec![totals(0.0, 1.0); 10];
        c[0].takes = 2.0;
        // 10 takes per 10 users vs 2 per 10 → +400%
        assert!((group_uplift(Metric::Av, &t, &c).unwrap() - 400.0).abs() < 1e-9);
        assert!(group_uplift(Metric::Cv, &t, &c).unwrap().abs() < 1e-9);
        // no reference distance logged in control: undefined
        assert!(group_uplift(Metric::Rd, &t, &c).is_none());
    }

    #[test]
    fn bootstrap_se_is_sane() {
        let mut rng = derive_stream(1, "bs", 0);
        let mk = |rng: &mut crate::rng::RngStream| -> Vec<UserTotals> {
            (0..2000).map(|_| totals(f64::from(u8::from(rng.chance(0.2))), 1.0)).collect()
        };
        let (t, c) = (mk(&mut rng), mk(&mut rng));
        let s = bootstrap_uplifts(&t, &c, &[Metric::Av], 500, 3).unwrap();
        // analytic: relative SE of a ratio of two proportions ≈ sqrt(2 * 0.8 / (0.2 * 2000)) ≈ 6.3%
        assert!(s[0].se > 4.0 && s[0].se < 9.0, "{}", s[0].se);
        assert!(s[0].prob_positive > 0.0 && s[0].prob_positive < 1.0);
    }

    #[test]
    fn stopping_rule_examples() {
        let rule = StoppingRule { min_days: 14, max_days: 42, confidence: 0.8, resamples: 200 };
        let all_pos = vec![1.0; 50];
        let p = prob_mean_positive(&all_pos, 200, 1).unwrap();
        assert_eq!(rule.decide(14, &[p]), Some(StopReason::Positive));
        assert_eq!(rule.decide(13, &[p]), None);
        let sym: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = prob_mean_positive(&sym, 2000, 2).unwrap();
        assert!((p - 0.5).abs() < 0.1, "{p}");
        assert_eq!(rule.decide(20, &[p]), None);
        assert_eq!(rule.decide(42, &[p]), Some(StopReason::MaxDays));
        assert_eq!(rule.decide(20, &[0.05, 0.1]), Some(StopReason::Futility));
        assert_eq!(rule.decide(20, &[0.9, 0.1]), None);
    }

    #[test]
    fn stop_day_shrinks_with_effect_size() {
        // Each day adds 20 users' deltas ~ N(effect, 1); mean stop day over seeds.
        let rule = StoppingRule { min_days: 1, max_days: 60, confidence: 0.95, resamples: 400 };
        let mut stop_days = Vec::new();
        for effect in [0.05, 0.2, 0.8] {
            let mut total = 0;
            for seed in 0..8 {
                let mut rng = derive_stream(seed, "effect", 0);
                let mut deltas = Vec::new();
                let mut stop = rule.max_days;
                for day in 1..=rule.max_days {
                    deltas.extend((0..20).map(|_| effect + rng.normal()));
                    let p = prob_mean_positive(&deltas, rule.resamples, u64::from(day)).unwrap();
                    if rule.decide(day, &[p]).is_some() {
                        stop = day;
                        break;
                    }
                }
                total += stop;
            }
            stop_days.push(total);
        }
        assert!(stop_days[0] >= stop_days[1] && stop_days[1] >= stop_days[2], "{stop_days:?}");
        assert!(stop_days[0] > stop_days[2]);
    }

    #[test]
    fn mann_kendall_detects_trends() {
        let up: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let mk = mann_kendall(&up).unwrap();
        assert!(mk.p_value < 1e-6 && mk.z > 0.0);
        let down: Vec<f64> = up.iter().rev().cloned().collect();
        assert!(mann_kendall(&down).unwrap().p_decreasing < 1e-6);
        let flat = vec![1.0; 30];
        let mk = mann_kendall(&flat).unwrap();
        assert_eq!(mk.s, 0.0);
        // n = 10 strictly increasing: S = 45, var = 125, z = 44/sqrt(125)
        let mk = mann_kendall(&up[..10]).unwrap();
        assert!((mk.z - 44.0 / 125f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn slope_ci() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = ols_slope(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-9);
        let mut rng = derive_stream(2, "noise", 0);
        let flat: Vec<f64> = x.iter().map(|_| rng.normal()).collect();
        assert!(series_slope(&flat).unwrap().ci_contains_zero());
    }

    #[test]
    fn decay_fit_recovers_parameters() {
        let t: Vec<f64> = (0..28).map(f64::from).collect();
        let y: Vec<f64> = t.iter().map(|d| 2.0 * (1.0 + 0.8 * (-d / 5.0).exp())).collect();
        let f = fit_decay(&t, &y).unwrap();
        assert!((f.tau - 5.0).abs() < 0.05 && (f.amplitude - 0.8).abs() < 0.01 && (f.level - 2.0).abs() < 0.01);
    }
}

//! Serving-time monitoring: feature and prediction drift, business metrics,
//! and attention-importance stability, all reduced to threshold alerts.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cos_dist, daily_metrics, normalize, uniform_reference, MetricReport};
use crate::model::{AttentiveRegressor, FeatureImportance, Predictor};
use crate::policy::PolicyConfig;
use crate::sim::{step_day, Arm, Deployment, NoveltyState, World};
use crate::types::FeatureRow;

const PSI_EPS: f64 = 1e-6;

/// Interior cut points of `bins` equal-frequency bins over `reference`.
/// Repeated quantiles collapse, so constant columns yield a single bin.
pub fn equal_frequency_edges(reference: &[f64], bins: usize) -> Result<Vec<f64>> {
    if reference.is_empty() || bins < 2 {
        return Err(Error::domain("equal-frequency edges need data and at least two bins"));
    }
    let mut sorted = reference.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins).map(|i| sorted[i * sorted.len() / bins]).collect();
    edges.dedup();
    Ok(edges)
}

fn proportions(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; edges.len() + 1];
    for v in values {
        counts[edges.partition_point(|e| e <= v)] += 1.0;
    }
    let (n, b) = (values.len() as f64, counts.len() as f64);
    counts.into_iter().map(|c| (c / n + PSI_EPS) / (1.0 + b * PSI_EPS)).collect()
}

/// PSI over fixed bin edges. Symmetric in its two samples.
pub fn psi_with_edges(a: &[f64], b: &[f64], edges: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("PSI of an empty sample"));
    }
    let (p, q) = (proportions(a, edges), proportions(b, edges));
    Ok(p.iter().zip(&q).map(|(p, q)| (q - p) * (q / p).ln()).sum())
}

/// PSI of `current` against `bins` equal-frequency bins of `reference`.
pub fn psi(reference: &[f64], current: &[f64], bins: usize) -> Result<f64> {
    psi_with_edges(reference, current, &equal_frequency_edges(reference, bins)?)
}

/// Feature rows, model outputs and (when known) labels for one window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriftWindow {
    pub features: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
    pub labels: Option<Vec<Vec<f64>>>,
}

impl DriftWindow {
    /// Window from labelled rows scored by `model`.
    pub fn from_rows(rows: &[FeatureRow], model: &dyn Predictor) -> Result<Self> {
        let predictions = rows.iter().map(|r| Ok(model.predict(&r.features)?.into_inner())).collect::<Result<_>>()?;
        Ok(DriftWindow {
            features: rows.iter().map(|r| r.features.clone()).collect(),
            predictions,
            labels: Some(rows.iter().map(|r| r.label.values().to_vec()).collect()),
        })
    }

    /// Unlabelled window scored by `model`.
    pub fn serving(features: Vec<Vec<f64>>, model: &dyn Predictor) -> Result<Self> {
        let predictions = features.iter().map(|f| Ok(model.predict(f)?.into_inner())).collect::<Result<_>>()?;
        Ok(DriftWindow { features, predictions, labels: None })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub psi: Vec<f64>,
    /// Cosine distance between the windows' mean prediction directions.
    pub direction_drift: f64,
    /// Per target, change in correlation between predicted and observed
    /// shares; present when both windows carry labels.
    pub label_drift: Option<Vec<f64>>,
}

impl DriftReport {
    pub fn max_psi(&self) -> f64 {
        self.psi.iter().copied().fold(0.0, f64::max)
    }
}

fn mean_direction(preds: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = preds.first().ok_or_else(|| Error::domain("no predictions"))?.len();
    let mut acc = vec![0.0; d];
    for p in preds {
        acc.iter_mut().zip(normalize(p)?).for_each(|(a, v)| *a += v);
    }
    Ok(acc)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn target_correlations(w: &DriftWindow, labels: &[Vec<f64>]) -> Result<Vec<f64>> {
    let shares = |v: &Vec<f64>| -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect()
    };
    let p: Vec<Vec<f64>> = w.predictions.iter().map(shares).collect();
    let y: Vec<Vec<f64>> = labels.iter().map(shares).collect();
    let d = p.first().ok_or_else(|| Error::domain("no predictions"))?.len();
    Ok((0..d)
        .map(|j| {
            let pj: Vec<f64> = p.iter().map(|r| r[j]).collect();
            let yj: Vec<f64> = y.iter().map(|r| r[j]).collect();
            pearson(&pj, &yj)
        })
        .collect())
}

pub fn compute_drift(reference: &DriftWindow, current: &DriftWindow, bins: usize) -> Result<DriftReport> {
    let f = reference.features.first().ok_or_else(|| Error::domain("empty reference window"))?.len();
    if current.features.is_empty() {
        return Err(Error::domain("empty current window"));
    }
    if current.features.iter().chain(&reference.features).any(|r| r.len() != f) {
        return Err(Error::domain("feature width differs between windows"));
    }
    let psi = (0..f)
        .map(|j| {
            let a: Vec<f64> = reference.features.iter().map(|r| r[j]).collect();
            let b: Vec<f64> = current.features.iter().map(|r| r[j]).collect();
            self::psi(&a, &b, bins)
        })
        .collect::<Result<_>>()?;
    let direction_drift = cos_dist(&mean_direction(&reference.predictions)?, &mean_direction(&current.predictions)?)?;
    let label_drift = match (&reference.labels, &current.labels) {
        (Some(a), Some(b)) => {
            let (ca, cb) = (target_correlations(reference, a)?, target_correlations(current, b)?);
            Some(ca.iter().zip(&cb).map(|(x, y)| (y - x).abs()).collect())
        }
        _ => None,
    };
    Ok(DriftReport { psi, direction_drift, label_drift })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertPolicy {
    pub psi_threshold: f64,
    pub direction_threshold: f64,
    /// Relative drops of the trailing 3-day mean below the baseline mean.
    pub rd_drop_threshold: f64,
    /// Applies to both take rate and click rate.
    pub tr_drop_threshold: f64,
    pub importance_shift_threshold: f64,
}

impl Default for AlertPolicy {
    fn default() -> Self {
        AlertPolicy {
            psi_threshold: 0.2,
            direction_threshold: 0.02,
            rd_drop_threshold: 0.1,
            tr_drop_threshold: 0.2,
            importance_shift_threshold: 0.015,
        }
    }
}

impl AlertPolicy {
    pub fn validate(&self) -> Result<()> {
        let all =
            [self.psi_threshold, self.direction_threshold, self.rd_drop_threshold, self.tr_drop_threshold, self.importance_shift_threshold];
        if all.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::validation("alert thresholds must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    FeatureDrift,
    PredictionDrift,
    TakeRate,
    ClickRate,
    Diversity,
    Importance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub day: u32,
    #[serde(rename = "type")]
    pub kind: AlertKind,
    pub statistic: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
}

pub fn drift_alerts(day: u32, report: &DriftReport, policy: &AlertPolicy) -> Vec<Alert> {
    let mut out: Vec<Alert> = report
        .psi
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > policy.psi_threshold)
        .map(|(j, p)| Alert { day, kind: AlertKind::FeatureDrift, statistic: *p, threshold: policy.psi_threshold, feature: Some(j) })
        .collect();
    if report.direction_drift > policy.direction_threshold {
        out.push(Alert {
            day,
            kind: AlertKind::PredictionDrift,
            statistic: report.direction_drift,
            threshold: policy.direction_threshold,
            feature: None,
        });
    }
    out
}

const TRAILING: usize = 3;
const BASELINE: usize = 28;

/// Alerts when the trailing 3-day mean of TR, CR or RD falls more than the
/// policy's relative threshold below the mean of the preceding (up to) 28
/// days. A metric alerts once per excursion, on its first day.
pub fn business_metrics_watch(reports: &[MetricReport], policy: &AlertPolicy) -> Result<Vec<Alert>> {
    if reports.len() < 7 {
        return Err(Error::domain("business metrics watch needs at least 7 days"));
    }
    type Get = fn(&MetricReport) -> Option<f64>;
    let series: [(AlertKind, Get, f64); 3] = [
        (AlertKind::TakeRate, |r| r.tr, policy.tr_drop_threshold),
        (AlertKind::ClickRate, |r| r.cr, policy.tr_drop_threshold),
        (AlertKind::Diversity, |r| r.rd, policy.rd_drop_threshold),
    ];
    let mean = |v: &[MetricReport], get: Get| -> Option<f64> {
        let xs: Vec<f64> = v.iter().filter_map(get).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let mut out = Vec::new();
    for (kind, get, threshold) in series {
        let mut firing = false;
        for i in 6..reports.len() {
            let start = i + 1 - TRAILING;
            let recent = mean(&reports[start..=i], get);
            let base = mean(&reports[start.saturating_sub(BASELINE)..start], get);
            let drop = match (recent, base) {
                (Some(r), Some(b)) if b > 0.0 => 1.0 - r / b,
                _ => continue,
            };
            let now = drop > threshold;
            if now && !firing {
                out.push(Alert { day: reports[i].day, kind, statistic: drop, threshold, feature: None });
            }
            firing = now;
        }
    }
    out.sort_by_key(|a| a.day);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTrace {
    pub reference: FeatureImportance,
    /// `(day, L1 distance to the reference)`.
    pub shifts: Vec<(u32, f64)>,
    pub alerts: Vec<Alert>,
}

/// Daily attention importance on serving samples against the importance on
/// the training sample.
pub fn importance_stability(
    model: &AttentiveRegressor,
    training_sample: &[Vec<f64>],
    daily: &[(u32, Vec<Vec<f64>>)],
    policy: &AlertPolicy,
) -> Result<ImportanceTrace> {
    let reference = model.feature_importance(training_sample)?;
    let mut shifts = Vec::new();
    let mut alerts = Vec::new();
    for (day, sample) in daily {
        let shift = reference.l1_distance(&model.feature_importance(sample)?);
        if shift > policy.importance_shift_threshold {
            alerts.push(Alert {
                day: *day,
                kind: AlertKind::Importance,
                statistic: shift,
                threshold: policy.importance_shift_threshold,
                feature: None,
            });
        }
        shifts.push((*day, shift));
    }
    Ok(ImportanceTrace { reference, shifts, alerts })
}

pub fn write_alerts_jsonl<W: Write>(mut out: W, alerts: &[Alert]) -> Result<()> {
    for a in alerts {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatchConfig {
    /// Days simulated before watching starts, so launch transients settle.
    pub burn_in_days: u32,
    pub days: u32,
    pub bins: usize,
    /// Cap on users sampled per day for drift and importance.
    pub sample_users: usize,
    pub window_days: u32,
    pub policy: AlertPolicy,
}

impl Default for WatchConfig {
    fn default() -> Self {
        WatchConfig { burn_in_days: 14, days: 28, bins: 10, sample_users: 1000, window_days: 30, policy: AlertPolicy::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatchReport {
    pub drift: Vec<DriftReport>,
    pub metrics: Vec<MetricReport>,
    pub importance: ImportanceTrace,
    pub alerts: Vec<Alert>,
}

/// Serves `deployment` under the model policy and runs every monitor on the
/// watched days. Drift compares each day's active users against `reference`.
///
/// Only users with a full aggregation window are sampled, the population the
/// training rows come from. The sample rotates daily.
pub fn watch_serving(
    world: &World,
    model: &AttentiveRegressor,
    deployment: Arc<Deployment>,
    reference: &[FeatureRow],
    config: &WatchConfig,
) -> Result<WatchReport> {
    config.policy.validate()?;
    if config.days < 7 || config.bins < 2 || config.sample_users == 0 {
        return Err(Error::validation("watch needs >= 7 days, >= 2 bins and a nonempty sample"));
    }
    let arm = Arm { name: "model".into(), policy: PolicyConfig::Model, deployment };
    let groups = vec![0; world.n_users()];
    let mut novelty = NoveltyState::default();
    novelty.mark_familiar(arm.deployment.serving.fallback.id);
    let reference_window = DriftWindow::from_rows(reference, model)?;
    let training_sample: Vec<Vec<f64>> = reference.iter().map(|r| r.features.clone()).collect();
    let ref_dir = uniform_reference(world.dim());
    // the whole daily batch is scored, so sample from it rather than from the day's visitors
    let eligible: Vec<usize> = (0..world.n_users()).filter(|&u| world.users[u].days_active >= config.window_days).collect();
    let (mut drift, mut metrics, mut daily_samples, mut alerts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());

    for day in 0..config.burn_in_days + config.days {
        let out = step_day(world, std::slice::from_ref(&arm), &groups, &mut novelty, day, false)?;
        if day < config.burn_in_days {
            continue;
        }
        metrics.push(daily_metrics(day, &out.events, &arm.deployment.serving.all(), &ref_dir)?);
        let stride = eligible.len().div_ceil(config.sample_users).max(1);
        let offset = day as usize % stride;
        let features: Vec<Vec<f64>> = eligible
            .iter()
            .skip(offset)
            .step_by(stride)
            .filter_map(|&u| world.aggregated_features(u, config.window_days, day).map(|(f, _)| f))
            .collect();
        if features.is_empty() {
            continue;
        }
        let report = compute_drift(&reference_window, &DriftWindow::serving(features.clone(), model)?, config.bins)?;
        alerts.extend(drift_alerts(day, &report, &config.policy));
        drift.push(report);
        daily_samples.push((day, features));
    }
    alerts.extend(business_metrics_watch(&metrics, &config.policy)?);
    let importance = importance_stability(model, &training_sample, &daily_samples, &config.policy)?;
    alerts.extend(importance.alerts.iter().cloned());
    alerts.sort_by_key(|a| a.day);
    Ok(WatchReport { drift, metrics, importance, alerts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn gaussian(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = derive_stream(seed, "psi-test", 0);
        (0..n).map(|_| shift + rng.normal()).collect()
    }

    #[test]
    fn identical_and_permuted_windows() {
        let a = gaussian(5000, 0.0, 1);
        assert!(psi(&a, &a, 10).unwrap().abs() < 1e-12);
        let mut b = a.clone();
        b.reverse();
        assert!(psi(&a, &b, 10).unwrap() < 0.01);
    }

    #[test]
    fn one_sd_shift_exceeds_point_one() {
        let (a, b) = (gaussian(10_000, 0.0, 1), gaussian(10_000, 1.0, 2));
        assert!(psi(&a, &b, 10).unwrap() > 0.1);
        // same distribution, fresh draw
        assert!(psi(&a, &gaussian(10_000, 0.0, 3), 10).unwrap() < 0.01);
    }

    #[test]
    fn fixed_edge_psi_is_symmetric() {
        let (a, b) = (gaussian(3000, 0.0, 4), gaussian(2000, 0.4, 5));
        let edges = equal_frequency_edges(&a, 10).unwrap();
        let (x, y) = (psi_with_edges(&a, &b, &edges).unwrap(), psi_with_edges(&b, &a, &edges).unwrap());
        assert!(x >= 0.0 && (x - y).abs() < 1e-9);
    }

    #[test]
    fn constant_column_has_zero_psi() {
        assert_eq!(psi(&[1.0; 50], &[1.0; 20], 10).unwrap(), 0.0);
        assert!(psi(&[], &[1.0], 10).is_err());
        assert!(psi(&[1.0], &[1.0], 1).is_err());
    }

    fn flat(days: u32, tr: f64) -> Vec<MetricReport> {
        (0..days).map(|day| MetricReport { day, cv: 0, av: 0, impressions: 1000, tr: Some(tr), cr: Some(0.3), rd: Some(0.2) }).collect()
    }

    #[test]
    fn flat_series_is_quiet() {
        assert!(business_metrics_watch(&flat(60, 0.1), &AlertPolicy::default()).unwrap().is_empty());
        assert!(business_metrics_watch(&flat(6, 0.1), &AlertPolicy::default()).is_err());
    }

    #[test]
    fn take_rate_collapse_alerts_within_three_days() {
        let mut s = flat(45, 0.1);
        s[30..].iter_mut().for_each(|r| r.tr = Some(0.05));
        let alerts = business_metrics_watch(&s, &AlertPolicy::default()).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].kind, AlertKind::TakeRate);
        assert!((30..=33).contains(&alerts[0].day), "{:?}", alerts[0]);
    }

    #[test]
    fn alerts_serialize_with_type_field() {
        let a = Alert { day: 3, kind: AlertKind::Diversity, statistic: 0.25, threshold: 0.1, feature: None };
        let mut buf = Vec::new();
        write_alerts_jsonl(&mut buf, &[a]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"day\":3,\"type\":\"diversity\",\"statistic\":0.25,\"threshold\":0.1}\n");
    }

    #[test]
    fn label_drift_needs_labels_on_both_sides() {
        let w = DriftWindow {
            features: vec![vec![0.0], vec![1.0]],
            predictions: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            labels: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        };
        let r = compute_drift(&w, &w, 10).unwrap();
        assert_eq!(r.label_drift, Some(vec![0.0, 0.0]));
        assert!(r.direction_drift.abs() < 1e-12);
        let unlabelled = DriftWindow { labels: None, ..w.clone() };
        assert!(compute_drift(&w, &unlabelled, 10).unwrap().label_drift.is_none());
    }
}

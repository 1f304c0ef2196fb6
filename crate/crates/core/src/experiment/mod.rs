//! A/B experiments against the simulator, offline evaluation, and the
//! novelty decomposition.

mod lab;
mod offline;
pub mod stats;

pub use lab::{training_rows, Lab, LabConfig, ModelChoice};
pub use offline::{offline_eval, target_imbalance_probe};
pub use stats::{Metric, StopReason, StoppingRule, UserTotals};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cos_dist, daily_metrics, uniform_reference, uplift, MetricReport, UpliftResult};
use crate::policy::PolicyConfig;
use crate::sim::{assign_groups, step_day, Arm, NoveltyState, HEURISTIC_BUNDLE_ID};
use crate::types::EventRecord;
use stats::{bootstrap_uplifts, fit_decay, series_slope, DecayFit, SlopeFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub model: ModelChoice,
}

impl ArmSpec {
    pub fn new(name: &str, policy: PolicyConfig) -> Self {
        ArmSpec { name: name.into(), policy, model: ModelChoice::Attentive }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub control: ArmSpec,
    pub treatments: Vec<ArmSpec>,
    /// Control first, then treatments in order.
    pub group_fractions: Vec<f64>,
    /// Days before the test during which every group gets the incumbent.
    #[serde(default)]
    pub pre_period_days: u32,
    pub stopping: StoppingRule,
    pub metrics: Vec<Metric>,
    pub salt: String,
    #[serde(default)]
    pub note: Option<String>,
}

fn heuristic() -> PolicyConfig {
    PolicyConfig::Heuristic { heuristic_bundle_id: HEURISTIC_BUNDLE_ID }
}

impl ExperimentSpec {
    fn base(name: &str, control: ArmSpec, treatments: Vec<ArmSpec>) -> Self {
        let n = treatments.len() + 1;
        ExperimentSpec {
            name: name.into(),
            control,
            treatments,
            group_fractions: vec![1.0 / n as f64; n],
            pre_period_days: 0,
            stopping: StoppingRule::default(),
            metrics: Metric::ALL.to_vec(),
            salt: name.into(),
            note: None,
        }
    }

    pub const PRESETS: [&'static str; 6] = ["experiment1", "experiment2", "experiment3", "experiment4", "experiment5", "aa"];

    /// Built-in layouts; `expN` and `experimentN` are both accepted.
    pub fn preset(name: &str) -> Result<Self> {
        let key = name.strip_prefix("experiment").or_else(|| name.strip_prefix("exp")).unwrap_or(name);
        let model = || ArmSpec::new("T_0", PolicyConfig::Model);
        let random = || ArmSpec::new("random", PolicyConfig::Random);
        let spec = match key {
            "1" => {
                let mut s = Self::base("experiment1", random(), vec![model()]);
                s.pre_period_days = 14;
                s.stopping = StoppingRule { min_days: 28, max_days: 28, ..StoppingRule::default() };
                s
            }
            "2" => {
                let mut s = Self::base(
                    "experiment2",
                    random(),
                    vec![
                        model(),
                        ArmSpec::new("T_10", PolicyConfig::Contaminated { contamination_p: 10.0 }),
                        ArmSpec::new("T_30", PolicyConfig::Contaminated { contamination_p: 30.0 }),
                    ],
                );
                s.stopping = StoppingRule { min_days: 28, max_days: 28, ..StoppingRule::default() };
                s
            }
            "3" => {
                let mut s = Self::base(
                    "experiment3",
                    ArmSpec { name: "linear T_0".into(), policy: PolicyConfig::Model, model: ModelChoice::Linear },
                    vec![model()],
                );
                s.note = Some("control uses the ridge linear baseline in place of a gradient-boosted tree model".into());
                s
            }
            "4" => Self::base("experiment4", ArmSpec::new("heuristic", heuristic()), vec![model()]),
            "5" => Self::base("experiment5", ArmSpec::new("heuristic", heuristic()), vec![ArmSpec::new("random", PolicyConfig::Random)]),
            "aa" => Self::base("aa", model(), vec![model()]),
            _ => return Err(Error::validation(format!("unknown preset '{name}'; known: {}", Self::PRESETS.join(", ")))),
        };
        Ok(spec)
    }

    pub fn arms(&self) -> Vec<&ArmSpec> {
        std::iter::once(&self.control).chain(&self.treatments).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.treatments.is_empty() {
            return Err(Error::validation(format!("experiment '{}' has no treatments", self.name)));
        }
        if self.group_fractions.len() != self.treatments.len() + 1 {
            return Err(Error::validation("group_fractions needs one entry per group, control first"));
        }
        let s: f64 = self.group_fractions.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.group_fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::validation("group_fractions must be positive and sum to 1"));
        }
        self.stopping.validate()?;
        if self.metrics.is_empty() {
            return Err(Error::validation("no metrics tracked"));
        }
        for a in self.arms() {
            a.policy.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub policy: String,
    pub size: usize,
    pub totals: UserTotals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricUplift {
    pub result: UpliftResult,
    pub bootstrap_se: f64,
    pub prob_positive: f64,
}

impl MetricUplift {
    /// Uplift in units of its bootstrap standard error.
    pub fn z(&self) -> f64 {
        self.result.uplift_pct / self.bootstrap_se
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentResult {
    pub arm: String,
    pub uplifts: Vec<MetricUplift>,
}

impl TreatmentResult {
    pub fn get(&self, metric: Metric) -> Option<&MetricUplift> {
        self.uplifts.iter().find(|u| u.result.metric_name == metric.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyAnalysis {
    pub treatment: String,
    pub benchmark: String,
    /// Fit of the benchmark group's AV relative to its pre-period level.
    pub fit: DecayFit,
    /// Daily AV uplift (%) of each group over its own pre-period level.
    pub raw_uplift: Vec<f64>,
    pub benchmark_uplift: Vec<f64>,
    /// Treatment uplift with the fitted novelty multiplier divided out.
    pub adjusted_uplift: Vec<f64>,
    /// Treatment uplift minus benchmark uplift, day by day.
    pub difference_uplift: Vec<f64>,
    pub raw_slope: SlopeFit,
    pub adjusted_slope: SlopeFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub note: Option<String>,
    pub arms: Vec<ArmSummary>,
    /// Per group, one report per pre-period day.
    pub pre_period: Vec<Vec<MetricReport>>,
    /// Per group, one report per test day.
    pub daily: Vec<Vec<MetricReport>>,
    pub treatments: Vec<TreatmentResult>,
    pub stop_day: u32,
    pub stop_reason: StopReason,
    pub degenerate_groups: Vec<String>,
    /// Share of daily batch rows served the fallback, over the test.
    pub fallback_rate: f64,
    pub novelty: Option<NoveltyAnalysis>,
}

fn split_events(events: Vec<EventRecord>, groups: &[usize], n_arms: usize) -> Vec<Vec<EventRecord>> {
    let mut out = vec![Vec::new(); n_arms];
    for e in events {
        out[groups[e.user_id as usize]].push(e);
    }
    out
}

/// Runs `spec` on the lab's world until the stopping rule fires.
pub fn run_experiment(lab: &Lab, spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let world = &lab.world;
    let arm_specs = spec.arms();
    let n_arms = arm_specs.len();
    let arms: Vec<Arm> = arm_specs
        .iter()
        .map(|a| Ok(Arm { name: a.name.clone(), policy: a.policy.clone(), deployment: lab.deployment(a.model)? }))
        .collect::<Result<_>>()?;
    let groups = assign_groups(world.n_users(), &spec.group_fractions, &spec.salt)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_arms];
    groups.iter().enumerate().for_each(|(u, &g)| members[g].push(u));
    let reference = uniform_reference(world.dim());
    let mut novelty = NoveltyState::default();
    novelty.mark_familiar(HEURISTIC_BUNDLE_ID);

    let mut pre_period = vec![Vec::new(); n_arms];
    if spec.pre_period_days > 0 {
        let incumbent: Vec<Arm> = arms.iter().map(|a| Arm { policy: heuristic(), ..a.clone() }).collect();
        for day in 0..spec.pre_period_days {
            let out = step_day(world, &incumbent, &groups, &mut novelty, day, false)?;
            for (g, ev) in split_events(out.events, &groups, n_arms).into_iter().enumerate() {
                pre_period[g].push(daily_metrics(day, &ev, &incumbent[g].deployment.serving.all(), &reference)?);
            }
        }
    }

    let pools: Vec<_> = arms.iter().map(|a| a.deployment.serving.all()).collect();
    let ref_dist: Vec<std::collections::BTreeMap<u32, f64>> = pools
        .iter()
        .map(|p| p.bundles().iter().map(|b| Ok((b.id, cos_dist(&b.as_f64(), &reference)?))).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mut per_user = vec![UserTotals::default(); world.n_users()];
    let mut daily = vec![Vec::new(); n_arms];
    let (mut served, mut fallback) = (0usize, 0usize);
    let mut stop = (spec.stopping.max_days, StopReason::MaxDays);
    let member_totals = |per_user: &[UserTotals], g: usize| -> Vec<UserTotals> { members[g].iter().map(|&u| per_user[u]).collect() };

    for t in 0..spec.stopping.max_days {
        let day = spec.pre_period_days + t;
        let out = step_day(world, &arms, &groups, &mut novelty, day, false)?;
        served += out.batch_size.iter().sum::<usize>();
        fallback += out.fallback_served.iter().sum::<usize>();
        for e in &out.events {
            let g = groups[e.user_id as usize];
            let tot = &mut per_user[e.user_id as usize];
            tot.impressions += 1.0;
            tot.clicks += f64::from(u8::from(e.clicked));
            if e.taken {
                tot.takes += 1.0;
                tot.rd_sum += ref_dist[g][&e.bundle_id];
            }
        }
        for (g, ev) in split_events(out.events, &groups, n_arms).into_iter().enumerate() {
            daily[g].push(daily_metrics(day, &ev, &pools[g], &reference)?);
        }
        let days_run = t + 1;
        if days_run >= spec.stopping.min_days && days_run < spec.stopping.max_days {
            let control = member_totals(&per_user, 0);
            let mut probs = Vec::new();
            for g in 1..n_arms {
                let b = bootstrap_uplifts(&member_totals(&per_user, g), &control, &[Metric::Av], spec.stopping.resamples, u64::from(day))?;
                probs.push(b[0].prob_positive);
            }
            if let Some(reason) = spec.stopping.decide(days_run, &probs) {
                stop = (days_run, reason);
                break;
            }
        }
    }

    let arm_totals: Vec<Vec<UserTotals>> = (0..n_arms).map(|g| member_totals(&per_user, g)).collect();
    let mut summaries = Vec::new();
    let mut degenerate = Vec::new();
    for (g, a) in arm_specs.iter().enumerate() {
        let mut totals = UserTotals::default();
        arm_totals[g].iter().for_each(|t| totals.add(t));
        if totals.impressions == 0.0 {
            degenerate.push(a.name.clone());
        }
        summaries.push(ArmSummary { name: a.name.clone(), policy: a.policy.label(), size: members[g].len(), totals });
    }
    let mut treatments = Vec::new();
    for g in 1..n_arms {
        let mut uplifts = Vec::new();
        if !degenerate.contains(&arm_specs[g].name) && !degenerate.contains(&arm_specs[0].name) {
            let boot = bootstrap_uplifts(&arm_totals[g], &arm_totals[0], &spec.metrics, spec.stopping.resamples, 1_000_000 + g as u64)?;
            for (m, b) in spec.metrics.iter().zip(boot) {
                let (tn, td) = m.parts(&summaries[g].totals, summaries[g].size as f64);
                let (cn, cd) = m.parts(&summaries[0].totals, summaries[0].size as f64);
                if let Ok(result) = uplift(m.name(), tn, td, cn, cd) {
                    uplifts.push(MetricUplift { result, bootstrap_se: b.se, prob_positive: b.prob_positive });
                }
            }
        }
        treatments.push(TreatmentResult { arm: arm_specs[g].name.clone(), uplifts });
    }
    let mut report = ExperimentReport {
        name: spec.name.clone(),
        note: spec.note.clone(),
        arms: summaries,
        pre_period,
        daily,
        treatments,
        stop_day: stop.0,
        stop_reason: stop.1,
        degenerate_groups: degenerate,
        fallback_rate: if served > 0 { fallback as f64 / served as f64 } else { 0.0 },
        novelty: None,
    };
    if spec.pre_period_days > 0 {
        let bench = arm_specs.iter().position(|a| a.policy == PolicyConfig::Random);
        let treat = arm_specs.iter().position(|a| a.policy != PolicyConfig::Random);
        if let (Some(b), Some(t)) = (bench, treat) {
            report.novelty = Some(novelty_decomposition(&report, t, b)?);
        }
    }
    Ok(report)
}

fn per_capita_av(reports: &[MetricReport], size: usize) -> Vec<f64> {
    reports.iter().map(|r| r.av as f64 / size as f64).collect()
}

/// Separates the treatment's relevance effect from the novelty boost seen in
/// a benchmark group that received equally new, random bundles.
pub fn novelty_decomposition(report: &ExperimentReport, treatment: usize, benchmark: usize) -> Result<NoveltyAnalysis> {
    let n = report.arms.len();
    if treatment >= n || benchmark >= n || treatment == benchmark {
        return Err(Error::domain("novelty decomposition needs two distinct groups"));
    }
    if report.pre_period.iter().any(|p| p.is_empty()) {
        return Err(Error::domain("novelty decomposition needs a pre-period"));
    }
    let level = |g: usize| -> f64 {
        let v = per_capita_av(&report.pre_period[g], report.arms[g].size);
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (lt, lb) = (level(treatment), level(benchmark));
    if lt <= 0.0 || lb <= 0.0 {
        return Err(Error::domain("pre-period had no takes"));
    }
    let rel = |g: usize, base: f64| -> Vec<f64> { per_capita_av(&report.daily[g], report.arms[g].size).iter().map(|v| v / base).collect() };
    let (rt, rb) = (rel(treatment, lt), rel(benchmark, lb));
    let days: Vec<f64> = (0..rb.len()).map(|d| d as f64).collect();
    let fit = fit_decay(&days, &rb)?;
    let raw: Vec<f64> = rt.iter().map(|r| 100.0 * (r - 1.0)).collect();
    let bench: Vec<f64> = rb.iter().map(|r| 100.0 * (r - 1.0)).collect();
    let adjusted: Vec<f64> = rt.iter().zip(&days).map(|(r, d)| 100.0 * (r / fit.multiplier(*d) - 1.0)).collect();
    let difference: Vec<f64> = raw.iter().zip(&bench).map(|(a, b)| a - b).collect();
    Ok(NoveltyAnalysis {
        treatment: report.arms[treatment].name.clone(),
        benchmark: report.arms[benchmark].name.clone(),
        fit,
        raw_slope: series_slope(&raw)?,
        adjusted_slope: series_slope(&adjusted)?,
        raw_uplift: raw,
        benchmark_uplift: bench,
        adjusted_uplift: adjusted,
        difference_uplift: difference,
    })
}

impl ExperimentReport {
    pub fn treatment(&self, name: &str) -> Option<&TreatmentResult> {
        self.treatments.iter().find(|t| t.arm == name)
    }

    /// Uplift table: one row per treatment, one column per metric.
    pub fn uplift_table(&self) -> String {
        let metrics: Vec<&str> =
            self.treatments.iter().flat_map(|t| t.uplifts.iter().map(|u| u.result.metric_name.as_str())).fold(Vec::new(), |mut acc, m| {
                if !acc.contains(&m) {
                    acc.push(m);
                }
                acc
            });
        let mut s = String::new();
        let _ = writeln!(s, "{} (control: {}, stopped on day {} by {:?})", self.name, self.arms[0].name, self.stop_day, self.stop_reason);
        if let Some(n) = &self.note {
            let _ = writeln!(s, "note: {n}");
        }
        let _ = write!(s, "{:<14}", "treatment");
        for m in &metrics {
            let _ = write!(s, "{:>20}", format!("Δ{m}"));
        }
        s.push('\n');
        for t in &self.treatments {
            let _ = write!(s, "{:<14}", t.arm);
            for m in &metrics {
                match t.uplifts.iter().find(|u| u.result.metric_name == *m) {
                    Some(u) => {
                        let _ = write!(s, "{:>20}", format!("{:+.2}% ±{:.2}", u.result.uplift_pct, u.bootstrap_se));
                    }
                    None => {
                        let _ = write!(s, "{:>20}", "n/a");
                    }
                }
            }
            s.push('\n');
        }
        if !self.degenerate_groups.is_empty() {
            let _ = writeln!(s, "groups without impressions: {}", self.degenerate_groups.join(", "));
        }
        s
    }

    /// Daily series for every group as CSV.
    pub fn daily_csv(&self) -> String {
        let mut s = format!("group,phase,{}\n", MetricReport::CSV_HEADER);
        for (g, arm) in self.arms.iter().enumerate() {
            for (phase, rows) in [("pre", &self.pre_period[g]), ("test", &self.daily[g])] {
                for r in rows {
                    let _ = writeln!(s, "{},{phase},{}", arm.name, r.csv_line());
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentiveRegressorConfig;
    use crate::sim::WorldConfig;

    fn small_lab(amplitude: f64) -> Lab {
        let mut world = WorldConfig { n_users: 3000, seed: 9, ..WorldConfig::default() };
        world.behavior.novelty_amplitude = amplitude;
        let cfg = LabConfig {
            world,
            model: AttentiveRegressorConfig { epochs: 8, ..AttentiveRegressorConfig::default() },
            max_train_users: 1000,
            ..LabConfig::default()
        };
        Lab::prepare(&cfg).unwrap()
    }

    #[test]
    fn presets_validate() {
        for name in ExperimentSpec::PRESETS {
            let s = ExperimentSpec::preset(name).unwrap();
            s.validate().unwrap();
            assert!(s.stopping.min_days >= 14 && s.stopping.max_days <= 42);
        }
        assert_eq!(ExperimentSpec::preset("exp2").unwrap().treatments.len(), 3);
        assert!(ExperimentSpec::preset("experiment3").unwrap().note.is_some());
        assert!(matches!(ExperimentSpec::preset("exp9"), Err(Error::Validation(_))));
    }

    #[test]
    fn spec_json_round_trip_rejects_unknown_fields() {
        let s = ExperimentSpec::preset("exp2").unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentSpec>(&json).unwrap(), s);
        let bad = json.replacen("\"salt\"", "\"extra\":1,\"salt\"", 1);
        assert!(serde_json::from_str::<ExperimentSpec>(&bad).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        let mut s = ExperimentSpec::preset("exp4").unwrap();
        s.group_fractions = vec![0.7, 0.7];
        assert!(s.validate().is_err());
    }

    #[test]
    fn model_beats_random_and_stop_day_in_range() {
        let lab = small_lab(0.5);
        let mut spec = ExperimentSpec::preset("exp2").unwrap();
        spec.treatments.truncate(1);
        spec.group_fractions = vec![0.5, 0.5];
        let r = run_experiment(&lab, &spec).unwrap();
        assert!((spec.stopping.min_days..=spec.stopping.max_days).contains(&r.stop_day));
        assert_eq!(r.daily[0].len(), r.stop_day as usize);
        let t = &r.treatments[0];
        assert_eq!(t.uplifts.len(), 5);
        assert!(t.get(Metric::Av).unwrap().result.uplift_pct > 0.0);
        assert!(r.uplift_table().contains("ΔAV"));
        assert_eq!(r.daily_csv().lines().count(), 1 + 2 * r.stop_day as usize);
        // fallback is served only to users without history
        assert!(r.fallback_rate <= lab.config.world.new_user_fraction + 1e-3);
    }

    #[test]
    fn runs_are_deterministic() {
        let lab = small_lab(0.5);
        let mut spec = ExperimentSpec::preset("exp5").unwrap();
        spec.stopping = StoppingRule { min_days: 14, max_days: 14, resamples: 200, ..StoppingRule::default() };
        assert_eq!(run_experiment(&lab, &spec).unwrap(), run_experiment(&lab, &spec).unwrap());
    }

    #[test]
    fn without_novelty_adjustment_is_near_raw() {
        let lab = small_lab(0.0);
        let mut spec = ExperimentSpec::preset("exp1").unwrap();
        spec.stopping.resamples = 200;
        let n = run_experiment(&lab, &spec).unwrap().novelty.unwrap();
        let gap: f64 = n.raw_uplift.iter().zip(&n.adjusted_uplift).map(|(a, b)| (a - b).abs()).sum::<f64>() / n.raw_uplift.len() as f64;
        assert!(gap < 10.0, "{gap}");
        assert_eq!(n.raw_uplift.len(), 28);
    }

    #[test]
    fn decomposition_needs_pre_period() {
        let lab = small_lab(0.5);
        let mut spec = ExperimentSpec::preset("exp5").unwrap();
        spec.stopping = StoppingRule { min_days: 14, max_days: 14, resamples: 100, ..StoppingRule::default() };
        let r = run_experiment(&lab, &spec).unwrap();
        assert!(r.novelty.is_none());
        assert!(novelty_decomposition(&r, 1, 0).is_err());
        assert!(novelty_decomposition(&r, 1, 1).is_err());
    }

    #[test]
    fn silent_groups_are_reported_not_fatal() {
        let mut lab = small_lab(0.5);
        lab.world.users.iter_mut().for_each(|u| u.activity_rate = 0.0);
        let mut spec = ExperimentSpec::preset("exp4").unwrap();
        spec.stopping.resamples = 100;
        let r = run_experiment(&lab, &spec).unwrap();
        assert_eq!(r.degenerate_groups, vec!["heuristic".to_string(), "T_0".to_string()]);
        assert!(r.treatments[0].uplifts.is_empty());
        assert_eq!(r.stop_day, spec.stopping.max_days);
    }
}

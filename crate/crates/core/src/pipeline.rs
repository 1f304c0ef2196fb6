//! Configuration and staged artifact pipeline.
//!
//! Each stage reads what earlier stages wrote under one output directory and
//! records the SHA-256 of everything it writes in `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundleize::{audit_error_budget, build_pool, PoolBuild};
use crate::cluster::{fit_kmeans, ClusterModel};
use crate::error::{Error, Result};
use crate::experiment::{
    offline_eval, run_experiment, target_imbalance_probe, training_rows, ExperimentReport, ExperimentSpec, Lab, LabConfig, ModelChoice,
};
use crate::geometry::metrics_csv;
use crate::io::{
    read_dataset_csv, read_json, read_predictions_csv, sha256_file, write_dataset_csv, write_json, write_predictions_csv, write_text,
};
use crate::model::{AggregationRule, AttentiveRegressor, AttentiveRegressorConfig, ConstantPredictor, LinearBaseline, Predictor};
use crate::monitor::{business_metrics_watch, watch_serving, write_alerts_jsonl, Alert, WatchConfig};
use crate::policy::write_batch;
use crate::sim::{
    heuristic_bundle, run_feedback_loop, write_events_jsonl, Deployment, DeploymentConfig, FeedbackConfig, FeedbackReport, World,
    WorldConfig,
};
use crate::types::{Bundle, FeatureRow, PreferenceVector};

pub const CONFIG_VERSION: u32 = 1;

/// An experiment by preset name or spelled out in full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentRef {
    Preset(String),
    Spec(ExperimentSpec),
}

impl ExperimentRef {
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        match self {
            ExperimentRef::Preset(name) => ExperimentSpec::preset(name),
            ExperimentRef::Spec(s) => Ok(s.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Per-day event logs are written for this many leading days.
    pub event_log_days: u32,
}

/// Everything a run needs, in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed; it replaces every nested seed when the config is loaded.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub world: WorldConfig,
    pub model: AttentiveRegressorConfig,
    pub ridge_lambda: f64,
    pub min_active_days: u32,
    pub max_train_users: usize,
    pub test_fraction: f64,
    /// Aggregation windows compared offline; must include the served one.
    pub offline_windows: Vec<u32>,
    pub deployment: DeploymentConfig,
    pub experiments: Vec<ExperimentRef>,
    pub feedback: FeedbackConfig,
    pub simulate: SimulateConfig,
    pub monitor: WatchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lab = LabConfig::default();
        let mut cfg = RunConfig {
            version: CONFIG_VERSION,
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            world: lab.world,
            model: lab.model,
            ridge_lambda: lab.ridge_lambda,
            min_active_days: lab.min_active_days,
            max_train_users: lab.max_train_users,
            test_fraction: 0.2,
            offline_windows: vec![30, 15],
            deployment: lab.deployment,
            experiments: ExperimentSpec::PRESETS[..5].iter().map(|p| ExperimentRef::Preset(p.to_string())).collect(),
            feedback: FeedbackConfig::default(),
            simulate: SimulateConfig { event_log_days: 3 },
            monitor: WatchConfig::default(),
        };
        cfg.set_seed(42);
        cfg
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.world.seed = seed;
        self.model.seed = seed;
        self.deployment.kmeans_seed = seed;
        self.feedback.training.seed = seed;
        self.feedback.deployment.kmeans_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::validation(format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version)));
        }
        self.lab_config().validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::validation("test_fraction must be in (0, 1)"));
        }
        if !self.offline_windows.contains(&self.deployment.window_days) || self.offline_windows.contains(&0) {
            return Err(Error::validation("offline_windows must be positive and include deployment.window_days"));
        }
        for e in &self.experiments {
            e.resolve()?.validate()?;
        }
        self.feedback.validate()?;
        self.monitor.policy.validate()
    }

    pub fn lab_config(&self) -> LabConfig {
        LabConfig {
            world: self.world.clone(),
            model: self.model.clone(),
            ridge_lambda: self.ridge_lambda,
            min_active_days: self.min_active_days,
            max_train_users: self.max_train_users,
            deployment: self.deployment.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring where the run is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config_sha256: String,
    /// Relative path to SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Artifact locations under one run directory.
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        read_json(&self.path(MANIFEST))
    }

    fn record(&self, cfg: &RunConfig, rels: &[String]) -> Result<()> {
        let path = self.path(MANIFEST);
        let mut m = match read_json::<Manifest>(&path) {
            Ok(m) if m.config_sha256 == cfg.hash() => m,
            _ => Manifest { version: CONFIG_VERSION, seed: cfg.seed, config_sha256: cfg.hash(), artifacts: BTreeMap::new() },
        };
        for rel in rels {
            m.artifacts.insert(rel.clone(), sha256_file(&self.path(rel))?);
        }
        write_json(&path, &m)?;
        write_json(&self.path("config.json"), cfg)
    }

    fn csv_writer(&self, rel: &str) -> Result<BufWriter<File>> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d)?;
        }
        Ok(BufWriter::new(File::create(p)?))
    }
}

fn train_csv(w: u32) -> String {
    format!("data/train_n{w}.csv")
}
fn test_csv(w: u32) -> String {
    format!("data/test_n{w}.csv")
}
fn attentive_json(w: u32) -> String {
    format!("models/attentive_n{w}.json")
}
fn linear_json(w: u32) -> String {
    format!("models/linear_n{w}.json")
}
const WORLD: &str = "data/world.json";
const HEURISTIC: &str = "models/heuristic.json";
const OFFLINE: &str = "reports/offline.json";
const PREDICTIONS: &str = "serving/predictions.csv";
const CLUSTERS: &str = "serving/clusters.json";
const POOL: &str = "serving/pool.json";
const BUDGET: &str = "reports/error_budget.json";
const RD_CSV: &str = "reports/rd.csv";
const FEEDBACK: &str = "sim/feedback.json";

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage { stage: name.into(), source: Box::new(e) })
}

/// A loaded artifact that fails its checks is a schema problem of that file.
fn checked(rel: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Validation(m) | Error::Domain(m) => Error::Validation(format!("{rel}: {m}")),
        other => other,
    })
}

fn load_world(cfg: &RunConfig, a: &Artifacts) -> Result<World> {
    let world: World = read_json(&a.path(WORLD))?;
    if world.config != cfg.world {
        return Err(Error::validation("data/world.json was generated from a different world config"));
    }
    if world.users.len() != world.config.n_users || world.latents.len() != world.config.n_users {
        return Err(Error::validation("data/world.json: population size mismatch"));
    }
    for u in &world.users {
        checked(WORLD, u.validate())?;
    }
    Ok(world)
}

fn load_rows(a: &Artifacts, rel: &str) -> Result<Vec<FeatureRow>> {
    read_dataset_csv(File::open(a.path(rel)).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{rel}: {e}"))))?)
}

fn load_attentive(a: &Artifacts, w: u32) -> Result<AttentiveRegressor> {
    let m: AttentiveRegressor = read_json(&a.path(&attentive_json(w)))?;
    checked(&attentive_json(w), m.validate())?;
    Ok(m)
}

fn load_linear(a: &Artifacts, w: u32) -> Result<LinearBaseline> {
    let m: LinearBaseline = read_json(&a.path(&linear_json(w)))?;
    checked(&linear_json(w), m.validate())?;
    Ok(m)
}

fn load_heuristic(cfg: &RunConfig, a: &Artifacts) -> Result<Bundle> {
    let b: Bundle = read_json(&a.path(HEURISTIC))?;
    checked(HEURISTIC, b.validate(&cfg.world.catalog))?;
    Ok(b)
}

/// Generates the world and the offline train/test datasets.
pub fn gen_data(cfg: &RunConfig, a: &Artifacts) -> Result<()> {
    let world = World::generate(&cfg.world)?;
    write_json(&a.path(WORLD), &world)?;
    let (train, test) = world.split_users(cfg.test_fraction);
    let mut written = vec![WORLD.to_string()];
    for &w in &cfg.offline_windows {
        let rows = training_rows(&world, train.iter().copied(), cfg.min_active_days, w, cfg.max_train_users);
        let test_rows = world.dataset(test.iter().copied(), w, AggregationRule::Evaluation).rows;
        write_dataset_csv(a.csv_writer(&train_csv(w))?, &rows)?;
        write_dataset_csv(a.csv_writer(&test_csv(w))?, &test_rows)?;
        written.extend([train_csv(w), test_csv(w)]);
    }
    a.record(cfg, &written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineRow {
    pub model: String,
    pub window_days: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub mean_cos_dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub rows: Vec<OfflineRow>,
    /// Per item, relative change of the served model's test score when the
    /// item is dropped from labels and predictions.
    pub imbalance: Vec<f64>,
}

impl OfflineReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:<12}{:>8}{:>10}{:>10}{:>18}\n", "model", "window", "n_train", "n_test", "mean cos dist");
        for r in &self.rows {
            let _ = writeln!(s, "{:<12}{:>8}{:>10}{:>10}{:>18.4}", r.model, r.window_days, r.n_train, r.n_test, r.mean_cos_dist);
        }
        s
    }
}

/// Trains the attentive model per window, the linear baseline and the
/// incumbent bundle, and scores everything on the held-out users.
pub fn train(cfg: &RunConfig, a: &Artifacts) -> Result<OfflineReport> {
    let mut rows_out = Vec::new();
    let mut written = Vec::new();
    let mut imbalance = Vec::new();
    for &w in &cfg.offline_windows {
        let (tr, te) = (load_rows(a, &train_csv(w))?, load_rows(a, &test_csv(w))?);
        let att = AttentiveRegressor::train(&tr, &cfg.model)?;
        let lin = LinearBaseline::train(&tr, cfg.ridge_lambda)?;
        let models: [(&str, &dyn Predictor); 2] = [("attentive", &att), ("linear", &lin)];
        for (name, m) in models {
            rows_out.push(OfflineRow {
                model: name.into(),
                window_days: w,
                n_train: tr.len(),
                n_test: te.len(),
                mean_cos_dist: offline_eval(m, &te)?,
            });
        }
        if w == cfg.deployment.window_days {
            let constant = ConstantPredictor::mean_direction(&tr)?;
            rows_out.push(OfflineRow {
                model: "constant".into(),
                window_days: w,
                n_train: tr.len(),
                n_test: te.len(),
                mean_cos_dist: offline_eval(&constant, &te)?,
            });
            imbalance = (0..cfg.world.catalog.dim).map(|j| target_imbalance_probe(&att, &te, j)).collect::<Result<_>>()?;
            write_json(&a.path(HEURISTIC), &heuristic_bundle(&tr, &cfg.world.catalog, &cfg.deployment.scale_grid)?)?;
            written.push(HEURISTIC.to_string());
        }
        write_json(&a.path(&attentive_json(w)), &att)?;
        write_json(&a.path(&linear_json(w)), &lin)?;
        written.extend([attentive_json(w), linear_json(w)]);
    }
    let report = OfflineReport { rows: rows_out, imbalance };
    write_json(&a.path(OFFLINE), &report)?;
    written.push(OFFLINE.into());
    a.record(cfg, &written)?;
    Ok(report)
}

/// Predicts every user with the served model and clusters the predictions.
pub fn cluster(cfg: &RunConfig, a: &Artifacts) -> Result<ClusterModel> {
    let world = load_world(cfg, a)?;
    let model = load_attentive(a, cfg.deployment.window_days)?;
    let d = &cfg.deployment;
    let mut predictions = Vec::with_capacity(world.n_users());
    for u in 0..world.n_users() {
        predictions.push(match world.aggregated_features(u, d.window_days, 0) {
            Some((f, _)) => Some(model.predict(&f)?),
            None => None,
        });
    }
    let present: Vec<PreferenceVector> = predictions.iter().flatten().cloned().collect();
    let clusters = fit_kmeans(&present, d.k, d.kmeans_seed, d.kmeans_max_iters, d.kmeans_tol)?;
    write_predictions_csv(a.csv_writer(PREDICTIONS)?, &predictions)?;
    write_json(&a.path(CLUSTERS), &clusters)?;
    a.record(cfg, &[PREDICTIONS.into(), CLUSTERS.into()])?;
    Ok(clusters)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub n: usize,
    pub mean_d_p: f64,
    pub mean_d_c: f64,
    pub mean_d_o: f64,
    pub mean_realized: f64,
    /// Share of test users whose realized cosine distance exceeds d_p + d_c + d_o.
    pub cosine_bound_violation_rate: f64,
}

/// Rounds centroids into the bundle pool and audits the error budget on
/// held-out users.
pub fn bundleize(cfg: &RunConfig, a: &Artifacts) -> Result<PoolBuild> {
    let clusters: ClusterModel = read_json(&a.path(CLUSTERS))?;
    if clusters.k != clusters.centroids.len() || clusters.centroids.iter().any(|c| c.len() != cfg.world.catalog.dim) {
        return Err(Error::validation("serving/clusters.json: centroid shape mismatch"));
    }
    let build = build_pool(&clusters, &cfg.world.catalog, &cfg.deployment.scale_grid)?;
    let model = load_attentive(a, cfg.deployment.window_days)?;
    let test = load_rows(a, &test_csv(cfg.deployment.window_days))?;
    let mut acc = [0.0; 4];
    let mut violations = 0usize;
    for r in &test {
        let p = model.predict(&r.features)?;
        let b = audit_error_budget(r.label.values(), p.values(), &clusters, &build)?;
        acc[0] += b.d_p;
        acc[1] += b.d_c;
        acc[2] += b.d_o;
        acc[3] += b.realized;
        violations += usize::from(!b.cosine_bound_holds());
    }
    let n = test.len().max(1) as f64;
    let summary = BudgetSummary {
        n: test.len(),
        mean_d_p: acc[0] / n,
        mean_d_c: acc[1] / n,
        mean_d_o: acc[2] / n,
        mean_realized: acc[3] / n,
        cosine_bound_violation_rate: violations as f64 / n,
    };
    write_json(&a.path(POOL), &build)?;
    write_json(&a.path(BUDGET), &summary)?;
    a.record(cfg, &[POOL.into(), BUDGET.into()])?;
    Ok(build)
}

fn load_deployment(cfg: &RunConfig, a: &Artifacts, world: &World) -> Result<Deployment> {
    let predictions = read_predictions_csv(File::open(a.path(PREDICTIONS))?, world.n_users())?;
    let clusters: ClusterModel = read_json(&a.path(CLUSTERS))?;
    let build: PoolBuild = read_json(&a.path(POOL))?;
    for b in build.pool.bundles() {
        checked(POOL, b.validate(&cfg.world.catalog))?;
    }
    let fallback = load_heuristic(cfg, a)?;
    let d = Deployment::assemble(predictions, clusters, build, fallback);
    d.map_err(|e| match e {
        Error::Domain(m) => Error::Validation(format!("serving artifacts disagree: {m}")),
        other => other,
    })
}

/// Serves the stored deployment through the feedback loop for the world's
/// horizon, logging the leading days' events.
pub fn simulate(cfg: &RunConfig, a: &Artifacts) -> Result<FeedbackReport> {
    let world = load_world(cfg, a)?;
    let deployment = load_deployment(cfg, a, &world)?;
    let mut written = Vec::new();
    let report = run_feedback_loop(&world, deployment, &cfg.feedback, &mut |out| {
        if let Some(batch) = &out.batch {
            let rel = "serving/recommendations_day000.csv".to_string();
            write_batch(a.csv_writer(&rel)?, batch)?;
            written.push(rel);
        }
        if out.day < cfg.simulate.event_log_days {
            let rel = format!("sim/events/day_{:03}.jsonl", out.day);
            write_events_jsonl(a.csv_writer(&rel)?, &out.events)?;
            written.push(rel);
        }
        Ok(())
    })?;
    write_json(&a.path(FEEDBACK), &report)?;
    write_text(&a.path("sim/metrics.csv"), &metrics_csv(&report.metrics))?;
    let mut rd = String::from("day,rd\n");
    for m in &report.metrics {
        let _ = writeln!(rd, "{},{}", m.day, m.rd.map(|v| v.to_string()).unwrap_or_default());
    }
    write_text(&a.path(RD_CSV), &rd)?;
    written.extend([FEEDBACK.into(), "sim/metrics.csv".into(), RD_CSV.into()]);
    a.record(cfg, &written)?;
    Ok(report)
}

/// A lab over the stored world, training rows, models and deployment.
pub fn load_lab(cfg: &RunConfig, a: &Artifacts) -> Result<Lab> {
    let world = load_world(cfg, a)?;
    let w = cfg.deployment.window_days;
    let deployment = load_deployment(cfg, a, &world)?;
    let lab = Lab::from_parts(
        cfg.lab_config(),
        world,
        load_rows(a, &train_csv(w))?,
        load_attentive(a, w)?,
        load_linear(a, w)?,
        load_heuristic(cfg, a)?,
    );
    lab.set_deployment(ModelChoice::Attentive, deployment)?;
    Ok(lab)
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

/// Runs one experiment against the stored deployment.
pub fn ab_test(cfg: &RunConfig, a: &Artifacts, spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let lab = load_lab(cfg, a)?;
    let report = run_experiment(&lab, spec)?;
    let base = format!("reports/ab_{}", slug(&spec.name));
    write_json(&a.path(&format!("{base}.json")), &report)?;
    write_text(&a.path(&format!("{base}_daily.csv")), &report.daily_csv())?;
    a.record(cfg, &[format!("{base}.json"), format!("{base}_daily.csv")])?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub serving_alerts: Vec<Alert>,
    /// Business-metric alerts on the feedback-loop run, when it exists.
    pub feedback_alerts: Vec<Alert>,
}

/// Watches the stored deployment in serving and, when present, the
/// feedback-loop business metrics.
pub fn monitor(cfg: &RunConfig, a: &Artifacts) -> Result<MonitorSummary> {
    let lab = load_lab(cfg, a)?;
    let watch = watch_serving(&lab.world, &lab.attentive, lab.deployment(ModelChoice::Attentive)?, &lab.training_rows, &cfg.monitor)?;
    write_json(&a.path("monitor/watch.json"), &watch)?;
    write_alerts_jsonl(a.csv_writer("monitor/alerts.jsonl")?, &watch.alerts)?;
    let mut written = vec!["monitor/watch.json".to_string(), "monitor/alerts.jsonl".to_string()];
    let mut feedback_alerts = Vec::new();
    if a.path(FEEDBACK).exists() {
        let fb: FeedbackReport = read_json(&a.path(FEEDBACK))?;
        feedback_alerts = business_metrics_watch(&fb.metrics, &cfg.monitor.policy)?;
        write_alerts_jsonl(a.csv_writer("monitor/feedback_alerts.jsonl")?, &feedback_alerts)?;
        written.push("monitor/feedback_alerts.jsonl".into());
    }
    a.record(cfg, &written)?;
    Ok(MonitorSummary { serving_alerts: watch.alerts, feedback_alerts })
}

/// Runs every stage in order.
pub fn run_pipeline(cfg: &RunConfig, a: &Artifacts) -> Result<Manifest> {
    cfg.validate()?;
    if a.path(MANIFEST).exists() {
        std::fs::remove_file(a.path(MANIFEST))?;
    }
    stage("gen-data", || gen_data(cfg, a))?;
    stage("train", || train(cfg, a))?;
    stage("cluster", || cluster(cfg, a))?;
    stage("bundleize", || bundleize(cfg, a))?;
    stage("simulate", || simulate(cfg, a))?;
    for e in &cfg.experiments {
        let spec = e.resolve()?;
        stage(&format!("ab-test {}", spec.name), || ab_test(cfg, a, &spec))?;
    }
    stage("monitor", || monitor(cfg, a))?;
    a.manifest()
}

/// Result of checking a run directory against its manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub text: String,
    /// Artifacts whose bytes no longer match the manifest.
    pub tampered: Vec<String>,
}

/// Human-readable summary of a run directory. Fails with the full list when
/// artifacts recorded in the manifest are missing.
pub fn report(a: &Artifacts) -> Result<RunSummary> {
    let manifest = a.manifest()?;
    let missing: Vec<&String> = manifest.artifacts.keys().filter(|k| !a.path(k).exists()).collect();
    let mut required: Vec<String> = Vec::new();
    for r in [OFFLINE, MANIFEST] {
        if !a.path(r).exists() {
            required.push(r.into());
        }
    }
    if !missing.is_empty() || !required.is_empty() {
        let all: Vec<String> = missing.into_iter().cloned().chain(required).collect();
        return Err(Error::validation(format!("missing artifacts: {}", all.join(", "))));
    }
    let mut tampered = Vec::new();
    for (rel, hash) in &manifest.artifacts {
        if &sha256_file(&a.path(rel))? != hash {
            tampered.push(rel.clone());
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "run {} (seed {}, config {})", a.root.display(), manifest.seed, &manifest.config_sha256[..12]);
    for t in &tampered {
        let _ = writeln!(s, "WARNING: {t} does not match its manifest hash");
    }
    let offline: OfflineReport = read_json(&a.path(OFFLINE))?;
    let _ = writeln!(s, "\noffline evaluation (held-out users)\n{}", offline.table());
    for rel in manifest.artifacts.keys().filter(|k| k.starts_with("reports/ab_") && k.ends_with(".json")) {
        let r: ExperimentReport = read_json(&a.path(rel))?;
        let _ = writeln!(s, "{}", r.uplift_table());
        if let Some(n) = &r.novelty {
            let _ = writeln!(
                s,
                "novelty: fitted tau {:.2} days; AV uplift slope raw {:+.3}/day, adjusted {:+.3}/day [{:+.3}, {:+.3}]\n",
                n.fit.tau, n.raw_slope.slope, n.adjusted_slope.slope, n.adjusted_slope.ci_low, n.adjusted_slope.ci_high
            );
        }
    }
    if manifest.artifacts.contains_key(RD_CSV) {
        let _ = writeln!(s, "recommendation diversity series: {}", a.path(RD_CSV).display());
    }
    if let Some(budget) = manifest.artifacts.get(BUDGET).and_then(|_| read_json::<BudgetSummary>(&a.path(BUDGET)).ok()) {
        let _ = writeln!(
            s,
            "error budget: d_p {:.4} d_c {:.4} d_o {:.4} realized {:.4} (cosine bound exceeded for {:.1}% of users)",
            budget.mean_d_p,
            budget.mean_d_c,
            budget.mean_d_o,
            budget.mean_realized,
            100.0 * budget.cosine_bound_violation_rate
        );
    }
    for rel in ["monitor/alerts.jsonl", "monitor/feedback_alerts.jsonl"] {
        if manifest.artifacts.contains_key(rel) {
            let n = std::fs::read_to_string(a.path(rel))?.lines().count();
            let _ = writeln!(s, "{rel}: {n} alert(s)");
        }
    }
    Ok(RunSummary { text: s, tampered })
}

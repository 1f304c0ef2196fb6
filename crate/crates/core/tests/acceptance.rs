//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//!     cargo test --release --test acceptance

use std::time::Instant;

use bundlerec::bundleize::{build_pool, round_to_bundle, ErrorBudget};
use bundlerec::cluster::fit_kmeans;
use bundlerec::experiment::stats::{mann_kendall, series_slope};
use bundlerec::experiment::{offline_eval, run_experiment, training_rows, ExperimentSpec, Lab, LabConfig, Metric, ModelChoice};
use bundlerec::geometry::{cos_dist, normalize};
use bundlerec::model::{AggregationRule, AttentiveRegressor, AttentiveRegressorConfig, LearningRateSchedule, LinearBaseline};
use bundlerec::monitor::{watch_serving, WatchConfig};
use bundlerec::pipeline::{run_pipeline, Artifacts, RunConfig};
use bundlerec::policy::{recommend, PolicyConfig, ServingSet};
use bundlerec::rng::{derive_stream, RngStream};
use bundlerec::sim::{run_feedback_loop, FeedbackConfig, World, WorldConfig};
use bundlerec::types::{FeatureRow, ItemCatalog, PreferenceVector};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sparse_positive(rng: &mut RngStream, d: usize, zero_p: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| if rng.chance(zero_p) { 0.0 } else { rng.uniform() }).collect();
        if v.iter().any(|x| *x > 0.0) {
            return v;
        }
    }
}

fn lab(world: WorldConfig) -> Lab {
    Lab::prepare(&LabConfig { world, ..LabConfig::default() }).expect("lab prepares")
}

fn scale_invariance() -> Outcome {
    let d = 13;
    let catalog = ItemCatalog::uniform(d, 0, 50).unwrap();
    let mut rng = derive_stream(1, "acceptance-scale", 0);
    let points: Vec<PreferenceVector> = (0..400).map(|_| PreferenceVector::new(sparse_positive(&mut rng, d, 0.3)).unwrap()).collect();
    let clusters = fit_kmeans(&points, 8, 1, 100, 1e-9).unwrap();
    let build = build_pool(&clusters, &catalog, &bundlerec::bundleize::default_scale_grid()).unwrap();
    let fallback = build.pool.bundles()[0].clone();
    let serving = ServingSet::new(build.pool, fallback).unwrap();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let p = sparse_positive(&mut rng, d, 0.3);
        let base = recommend(Some(&PreferenceVector::new(p.clone()).unwrap()), &serving, &PolicyConfig::Model, &mut rng).unwrap();
        for k in [1e-3, 1.0, 1e3] {
            let scaled = PreferenceVector::new(p.iter().map(|v| v * k).collect()).unwrap();
            let r = recommend(Some(&scaled), &serving, &PolicyConfig::Model, &mut rng).unwrap();
            mismatches += usize::from(r.bundle_id != base.bundle_id);
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 1000 predictions x 3 scales"))
}

fn error_budget() -> Outcome {
    let catalog = ItemCatalog::uniform(6, 0, 20).unwrap();
    let grid = bundlerec::bundleize::default_scale_grid();
    let mut rng = derive_stream(2, "acceptance-budget", 0);
    let (mut angular_fail, mut cosine_fail) = (0, 0);
    let n = 10_000;
    for _ in 0..n {
        let truth = sparse_positive(&mut rng, 6, 0.2);
        let pred = sparse_positive(&mut rng, 6, 0.2);
        let centroid = normalize(&sparse_positive(&mut rng, 6, 0.2)).unwrap();
        let bundle = round_to_bundle(&centroid, &catalog, &grid, 0).unwrap().bundle.as_f64();
        let b = ErrorBudget::from_chain(&truth, &pred, &centroid, &bundle).unwrap();
        angular_fail += usize::from(b.realized_angular > b.bound_angular + 1e-9);
        cosine_fail += usize::from(!b.cosine_bound_holds());
    }
    check(
        angular_fail == 0,
        format!(
            "angular bound violated {angular_fail}/{n}; cosine-form bound violated {:.2}% (reported only)",
            100.0 * cosine_fail as f64 / n as f64
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = derive_stream(seed, "acceptance-grad", 0);
        let (f, d, n) = (2 + rng.below(5), 2 + rng.below(4), 2 + rng.below(5));
        let cfg = AttentiveRegressorConfig {
            steps: 1 + rng.below(3),
            hidden_dim: 2 + rng.below(5),
            relax_gamma: 1.0 + rng.uniform(),
            sparsity_coeff: 0.01 * rng.uniform(),
            learning_rate: LearningRateSchedule { initial: 0.1, decay: 0.95 },
            epochs: 1,
            batch_size: 4,
            validation_fraction: 0.2,
            seed,
        };
        let rows: Vec<FeatureRow> = (0..n)
            .map(|i| FeatureRow {
                user_id: i as u64,
                features: (0..f).map(|_| rng.normal()).collect(),
                agg_days: 1,
                label: PreferenceVector::new((0..d).map(|_| rng.uniform() + 0.05).collect()).unwrap(),
            })
            .collect();
        let model = AttentiveRegressor::init(f, d, &cfg, None).unwrap().randomized(seed + 100, 0.5);
        worst = worst.max(model.grad_check(&rows, 1e-5).unwrap());
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over 20 configurations"))
}

fn offline_ordering() -> Outcome {
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let world = World::generate(&WorldConfig { seed, ..WorldConfig::default() }).unwrap();
        let (train, test) = world.split_users(0.2);
        let score = |w: u32| {
            let rows = training_rows(&world, train.iter().copied(), 30, w, 4000);
            let held_out = world.dataset(test.iter().copied(), w, AggregationRule::Evaluation).rows;
            let cfg = AttentiveRegressorConfig { seed, ..AttentiveRegressorConfig::default() };
            let att = offline_eval(&AttentiveRegressor::train(&rows, &cfg).unwrap(), &held_out).unwrap();
            let lin = offline_eval(&LinearBaseline::train(&rows, 1e-3).unwrap(), &held_out).unwrap();
            (att, lin)
        };
        let (a30, l30) = score(30);
        let (a15, _) = score(15);
        let ok = a15 - a30 >= 0.005 && l30 - a15 >= 0.005;
        passed += usize::from(ok);
        lines.push(format!("seed {seed}: {a30:.4}/{a15:.4}/{l30:.4}"));
    }
    check(passed >= 4, format!("{passed}/5 seeds ordered (attentive N=30 / N=15 / linear): {}", lines.join(", ")))
}

fn clustering_oracle() -> Outcome {
    let (mut bad_assign, mut bad_trace) = (0, 0);
    for seed in 0..50u64 {
        let mut rng = derive_stream(seed, "acceptance-kmeans", 0);
        let d = 2 + rng.below(4);
        let k = 1 + rng.below(3);
        let points: Vec<PreferenceVector> = (0..200).map(|_| PreferenceVector::new(sparse_positive(&mut rng, d, 0.2)).unwrap()).collect();
        let model = fit_kmeans(&points, k, seed, 100, 0.0).unwrap();
        bad_trace += usize::from(model.inertia_trace.windows(2).any(|w| w[1] > w[0] + 1e-9));
        for p in &points {
            let dists: Vec<f64> = model.centroids.iter().map(|c| cos_dist(p.values(), c).unwrap()).collect();
            let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let a = model.assign(p.values()).unwrap();
            bad_assign += usize::from(dists[a.index] > best + 1e-12);
        }
    }
    check(bad_assign == 0 && bad_trace == 0, format!("{bad_assign} assignment mismatches, {bad_trace} inertia increases over 50 seeds"))
}

fn exhaustive_min(u: &[f64], max: u32) -> f64 {
    let mut best = f64::INFINITY;
    for code in 1..(max + 1).pow(u.len() as u32) {
        let v: Vec<f64> = (0..u.len()).map(|j| f64::from(code / (max + 1).pow(j as u32) % (max + 1))).collect();
        best = best.min(cos_dist(u, &v).unwrap());
    }
    best
}

fn bundleization_oracle() -> Outcome {
    let catalog = ItemCatalog::uniform(4, 0, 9).unwrap();
    let grid: Vec<f64> = (1..=30).map(f64::from).collect();
    let mut rng = derive_stream(6, "acceptance-rounding", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = normalize(&sparse_positive(&mut rng, 4, 0.15)).unwrap();
        let r = round_to_bundle(&c, &catalog, &grid, 0).unwrap();
        worst = worst.max((r.d_o - exhaustive_min(&c, 9)).abs());
    }
    check(worst < 1e-12, format!("max |d_o - exhaustive minimum| = {worst:.1e} over 100 centroids"))
}

fn av_cv(r: &bundlerec::experiment::ExperimentReport, arm: &str) -> (f64, f64) {
    let t = r.treatment(arm).expect("treatment present");
    (t.get(Metric::Av).unwrap().result.uplift_pct, t.get(Metric::Cv).unwrap().result.uplift_pct)
}

fn contamination(labs: &[Lab]) -> Outcome {
    let spec = ExperimentSpec::preset("experiment2").unwrap();
    let mut passed = 0;
    let mut lines = Vec::new();
    for (seed, lab) in labs.iter().enumerate() {
        let r = run_experiment(lab, &spec).unwrap();
        let (a0, c0) = av_cv(&r, "T_0");
        let (a10, c10) = av_cv(&r, "T_10");
        let (a30, c30) = av_cv(&r, "T_30");
        passed += usize::from(a0 > a10 && a10 > a30 && a30 > 0.0 && c0 > c10 && c10 > c30 && c30 > 0.0);
        lines.push(format!("seed {seed}: AV {a0:.0}/{a10:.0}/{a30:.0} CV {c0:.0}/{c10:.0}/{c30:.0}"));
    }
    check(passed >= 4, format!("{passed}/5 seeds monotone; {}", lines.join("; ")))
}

fn random_vs_heuristic(labs: &[Lab]) -> Outcome {
    let spec = ExperimentSpec::preset("experiment5").unwrap();
    let mut passed = 0;
    let mut lines = Vec::new();
    for (seed, lab) in labs.iter().enumerate() {
        let r = run_experiment(lab, &spec).unwrap();
        let (av, cv) = av_cv(&r, "random");
        passed += usize::from(av < 0.0 && cv < 0.0);
        lines.push(format!("seed {seed}: AV {av:+.1}% CV {cv:+.1}% (day {})", r.stop_day));
    }
    check(passed >= 4, format!("{passed}/5 seeds degrade; {}", lines.join("; ")))
}

fn novelty(lab: &Lab) -> Outcome {
    let r = run_experiment(lab, &ExperimentSpec::preset("experiment1").unwrap()).unwrap();
    let n = r.novelty.as_ref().ok_or("no novelty analysis")?;
    let tau = lab.world.config.behavior.novelty_tau;
    let tau_ok = (n.fit.tau - tau).abs() <= 0.3 * tau;
    let adj_ok = n.adjusted_slope.ci_contains_zero();
    let raw_ok = n.raw_slope.slope < 0.0 && n.raw_slope.ci_high < 0.0;
    check(
        tau_ok && adj_ok && raw_ok,
        format!(
            "tau {:.2} (generator {tau}); adjusted slope {:+.3} [{:+.3}, {:+.3}]; raw slope {:+.3} [{:+.3}, {:+.3}]",
            n.fit.tau,
            n.adjusted_slope.slope,
            n.adjusted_slope.ci_low,
            n.adjusted_slope.ci_high,
            n.raw_slope.slope,
            n.raw_slope.ci_low,
            n.raw_slope.ci_high
        ),
    )
}

fn rd_trend(world_cfg: WorldConfig) -> Result<(f64, f64, f64, f64), String> {
    let lab = lab(world_cfg);
    let initial = (*lab.deployment(ModelChoice::Attentive).unwrap()).clone();
    let r = run_feedback_loop(&lab.world, initial, &FeedbackConfig::default(), &mut |_| Ok(())).unwrap();
    // Without retraining the series is compared from the day the first retrain would have happened.
    let first = r.retrains.first().map_or(WorldConfig::default().retrain_every, |c| c.day) as usize;
    let rd: Vec<f64> = r.rd()[first..].iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let mk = mann_kendall(&rd).map_err(|e| e.to_string())?;
    let head = series_slope(&rd[..20]).map_err(|e| e.to_string())?.slope;
    let tail = series_slope(&rd[rd.len() - 20..]).map_err(|e| e.to_string())?.slope;
    Ok((mk.z, mk.p_value, head, tail))
}

fn feedback_drift() -> Outcome {
    let (z, p, head, tail) = rd_trend(WorldConfig::default())?;
    let (z0, p0, _, _) = rd_trend(WorldConfig { retrain_every: 10_000, ..WorldConfig::default() })?;
    let ok = z < 0.0 && p < 0.05 && tail.abs() < head.abs() && p0 >= 0.05;
    check(
        ok,
        format!(
            "retraining: MK z {z:.2} p {p:.2e}, |slope| first 20 days {:.5} last 20 {:.5}; no retraining: MK z {z0:.2} p {p0:.3}",
            head.abs(),
            tail.abs()
        ),
    )
}

fn aa_sanity() -> Outcome {
    let spec = ExperimentSpec::preset("aa").unwrap();
    let mut clean = 0;
    let mut alerts = 0;
    for i in 0..20u64 {
        let lab = lab(WorldConfig { seed: 100 + i, ..WorldConfig::default() });
        let r = run_experiment(&lab, &spec).unwrap();
        let t = &r.treatments[0];
        clean += usize::from(Metric::ALL.iter().all(|m| t.get(*m).is_some_and(|u| u.z().abs() < 3.0)));
        if i < 10 {
            let d = lab.deployment(ModelChoice::Attentive).unwrap();
            alerts += watch_serving(&lab.world, &lab.attentive, d, &lab.training_rows, &WatchConfig::default()).unwrap().alerts.len();
        }
    }
    check(clean >= 18 && alerts <= 1, format!("{clean}/20 A/A runs within 3 SE on all metrics; {alerts} monitor alerts over 10 worlds"))
}

fn determinism() -> Outcome {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.json")).unwrap();
    let cfg = RunConfig::from_json(&text).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let a = Artifacts::new(dir.path().join(name));
        run_pipeline(&cfg, &a).map_err(|e| e.to_string())
    };
    let (a, b) = (run("a")?, run("b")?);
    let differing: Vec<&String> = a.artifacts.iter().filter(|(k, v)| b.artifacts.get(*k) != Some(v)).map(|(k, _)| k).collect();
    check(a == b && differing.is_empty(), format!("{} artifacts compared, {} differ {:?}", a.artifacts.len(), differing.len(), differing))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS {n:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {d} [{secs:.1}s]");
            }
        }
    };
    report(1, "scale invariance", &mut scale_invariance);
    report(2, "error budget", &mut error_budget);
    report(3, "gradient check", &mut gradient_check);
    report(4, "offline ordering", &mut offline_ordering);
    report(5, "clustering oracle", &mut clustering_oracle);
    report(6, "bundleization oracle", &mut bundleization_oracle);
    let big: Vec<Lab> = (0..5).map(|seed| lab(WorldConfig { seed, n_users: 20_000, ..WorldConfig::default() })).collect();
    report(7, "contamination monotonicity", &mut || contamination(&big));
    report(8, "random vs heuristic", &mut || random_vs_heuristic(&big));
    drop(big);
    report(9, "novelty decomposition", &mut || novelty(&lab(WorldConfig::default())));
    report(10, "feedback-loop diversity drift", &mut feedback_drift);
    report(11, "A/A sanity", &mut aa_sanity);
    report(12, "determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bundlerec::error::Result;
use bundlerec::experiment::ExperimentSpec;
use bundlerec::io::read_json;
use bundlerec::pipeline::{self, Artifacts, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bundlerec", version, about = "Bundle recommendation lifecycle on a synthetic population")]
struct Cli {
    /// Run configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the population and offline datasets.
    GenData,
    /// Train models and write the offline evaluation.
    Train,
    /// Predict all users and cluster the predictions.
    Cluster,
    /// Round centroids into the bundle pool.
    Bundleize,
    /// Run the serving feedback loop with periodic retraining.
    Simulate,
    /// Run an experiment by preset name or spec file.
    AbTest { experiment: String },
    /// Watch serving drift and business metrics.
    Monitor,
    /// Summarize an artifact directory.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_experiment(arg: &str) -> Result<ExperimentSpec> {
    let path = Path::new(arg);
    if path.extension().is_some_and(|e| e == "json") || path.is_file() {
        let spec: ExperimentSpec = read_json(path)?;
        spec.validate()?;
        Ok(spec)
    } else {
        ExperimentSpec::preset(arg)
    }
}

fn print_alerts(summary: &pipeline::MonitorSummary) {
    let n = summary.serving_alerts.len() + summary.feedback_alerts.len();
    println!("{} serving alert(s), {} feedback-loop alert(s)", summary.serving_alerts.len(), summary.feedback_alerts.len());
    for a in summary.serving_alerts.iter().chain(&summary.feedback_alerts) {
        println!("  day {:>3} {:?} statistic {:.4} threshold {:.4}", a.day, a.kind, a.statistic, a.threshold);
    }
    if n > 0 {
        println!("recommendation: investigate the alerts above and retrain manually (`bundlerec train`) if they are confirmed");
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Report = cli.command {
        let dir = match &cli.out {
            Some(d) => d.clone(),
            None => load_config(cli)?.out_dir,
        };
        let summary = pipeline::report(&Artifacts::new(dir))?;
        print!("{}", summary.text);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let a = Artifacts::new(&cfg.out_dir);
    match &cli.command {
        Command::GenData => pipeline::gen_data(&cfg, &a)?,
        Command::Train => print!("{}", pipeline::train(&cfg, &a)?.table()),
        Command::Cluster => {
            let c = pipeline::cluster(&cfg, &a)?;
            println!("k = {}, inertia {:.4}", c.k, c.inertia);
        }
        Command::Bundleize => {
            let b = pipeline::bundleize(&cfg, &a)?;
            println!("{} distinct bundles", b.pool.len());
        }
        Command::Simulate => {
            let r = pipeline::simulate(&cfg, &a)?;
            println!("{} days simulated, {} retrains", r.metrics.len(), r.retrains.len());
        }
        Command::AbTest { experiment } => {
            let spec = resolve_experiment(experiment)?;
            print!("{}", pipeline::ab_test(&cfg, &a, &spec)?.uplift_table());
        }
        Command::Monitor => print_alerts(&pipeline::monitor(&cfg, &a)?),
        Command::Pipeline => {
            let m = pipeline::run_pipeline(&cfg, &a)?;
            println!("{} artifacts written to {}", m.artifacts.len(), a.root.display());
            print!("{}", pipeline::report(&a)?.text);
        }
        Command::Report => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

//! Runs a built-in experiment on a simulated population.
//!
//!     cargo run --release --example ab_test -- experiment2

use bundlerec::experiment::{run_experiment, ExperimentSpec, Lab, LabConfig};
use bundlerec::sim::WorldConfig;

fn main() -> bundlerec::error::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "experiment2".into());
    let spec = ExperimentSpec::preset(&preset)?;
    let lab = Lab::prepare(&LabConfig { world: WorldConfig { n_users: 10_000, ..WorldConfig::default() }, ..LabConfig::default() })?;
    let report = run_experiment(&lab, &spec)?;
    print!("{}", report.uplift_table());
    for arm in &report.arms {
        println!("{:>10}: {} users, {} impressions, {} takes", arm.name, arm.size, arm.totals.impressions, arm.totals.takes);
    }
    Ok(())
}

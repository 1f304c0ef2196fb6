//! Separates the novelty bump from the lasting uplift using the pre-period
//! in which every arm saw the incumbent bundle.

use bundlerec::experiment::{run_experiment, ExperimentSpec, Lab, LabConfig};

fn main() -> bundlerec::error::Result<()> {
    let lab = Lab::prepare(&LabConfig::default())?;
    let report = run_experiment(&lab, &ExperimentSpec::preset("experiment1")?)?;
    let n = report.novelty.expect("experiment1 has a pre-period");
    println!("fitted tau {:.2} days, amplitude {:.3}", n.fit.tau, n.fit.amplitude);
    println!("day    raw  adjusted");
    for (d, (r, a)) in n.raw_uplift.iter().zip(&n.adjusted_uplift).enumerate().step_by(3) {
        println!("{d:>3} {r:>7.1} {a:>9.1}");
    }
    println!("raw slope {:+.3}/day, adjusted {:+.3}/day", n.raw_slope.slope, n.adjusted_slope.slope);
    Ok(())
}

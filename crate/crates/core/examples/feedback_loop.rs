//! Serves a model that is retrained weekly on its own takes and tracks
//! recommendation diversity as the pool narrows.

use bundlerec::experiment::{Lab, LabConfig, ModelChoice};
use bundlerec::sim::{run_feedback_loop, FeedbackConfig, WorldConfig};

fn main() -> bundlerec::error::Result<()> {
    let world = WorldConfig { n_users: 3000, horizon_days: 60, ..WorldConfig::default() };
    let lab = Lab::prepare(&LabConfig { world, ..LabConfig::default() })?;
    let initial = (*lab.deployment(ModelChoice::Attentive)?).clone();
    let report = run_feedback_loop(&lab.world, initial, &FeedbackConfig::default(), &mut |_| Ok(()))?;
    for c in &report.retrains {
        println!("day {:>3}: retrained on {} users, {} bundles", c.day, c.n_rows, c.pool_size);
    }
    for m in report.metrics.iter().step_by(5) {
        println!("day {:>3}: TR {:.4} RD {}", m.day, m.tr.unwrap_or(0.0), m.rd.map_or("-".into(), |v| format!("{v:.4}")));
    }
    Ok(())
}

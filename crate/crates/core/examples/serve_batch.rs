//! Builds a deployment for a small population and writes one day's batch
//! of recommendations, falling back to the incumbent bundle for users with
//! no prediction.

use bundlerec::experiment::{Lab, LabConfig, ModelChoice};
use bundlerec::policy::{fallback_rate, recommend, PolicyConfig};
use bundlerec::rng::derive_stream;
use bundlerec::sim::WorldConfig;

fn main() -> bundlerec::error::Result<()> {
    let mut cfg = LabConfig { world: WorldConfig { n_users: 2000, ..WorldConfig::default() }, ..LabConfig::default() };
    cfg.model.epochs = 15;
    let lab = Lab::prepare(&cfg)?;
    let d = lab.deployment(ModelChoice::Attentive)?;
    println!("pool of {} bundles, fallback {:?}", d.serving.pool.len(), d.serving.fallback.volumes);

    let mut rng = derive_stream(cfg.world.seed, "example-batch", 0);
    let batch = d
        .predictions
        .iter()
        .enumerate()
        .map(|(u, p)| Ok((u as u64, recommend(p.as_ref(), &d.serving, &PolicyConfig::Model, &mut rng)?)))
        .collect::<bundlerec::error::Result<Vec<_>>>()?;
    println!("fallback rate {:.3}", fallback_rate(&batch));
    bundlerec::policy::write_batch(std::io::stdout().lock(), &batch[..5])?;
    Ok(())
}

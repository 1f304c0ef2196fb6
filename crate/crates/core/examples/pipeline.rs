//! Runs every stage from a config file into an artifact directory and prints
//! the summary.
//!
//!     cargo run --release --example pipeline -- configs/small.json /tmp/run

use bundlerec::pipeline::{report, run_pipeline, Artifacts, RunConfig};

fn main() -> bundlerec::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.json").into());
    let mut cfg = RunConfig::load(config.as_ref())?;
    if let Some(out) = args.next() {
        cfg.out_dir = out.into();
    }
    let artifacts = Artifacts::new(&cfg.out_dir);
    let manifest = run_pipeline(&cfg, &artifacts)?;
    for (path, hash) in &manifest.artifacts {
        println!("{} {path}", &hash[..12]);
    }
    print!("{}", report(&artifacts)?.text);
    Ok(())
}

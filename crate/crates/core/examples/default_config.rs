//! Prints the built-in run configuration as JSON, a starting point for edits.
//!
//!     cargo run --example default_config > my_run.json

use bundlerec::pipeline::RunConfig;

fn main() {
    println!("{}", serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes"));
}

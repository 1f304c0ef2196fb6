//! PSI between feature windows and a business-metric watch over a series
//! with an injected take-rate collapse.

use bundlerec::geometry::MetricReport;
use bundlerec::monitor::{business_metrics_watch, psi, AlertPolicy};
use bundlerec::rng::derive_stream;

fn main() -> bundlerec::error::Result<()> {
    let mut rng = derive_stream(3, "example-drift", 0);
    let reference: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
    let same: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
    let shifted: Vec<f64> = (0..10_000).map(|_| rng.normal() + 1.0).collect();
    println!("PSI same distribution {:.4}", psi(&reference, &same, 10)?);
    println!("PSI shifted by 1 sd   {:.4}", psi(&reference, &shifted, 10)?);

    let days: Vec<MetricReport> = (0..40)
        .map(|day| {
            let tr = if day >= 30 { 0.05 } else { 0.1 };
            MetricReport { day, cv: 200, av: (1000.0 * tr) as u64, impressions: 1000, tr: Some(tr), cr: Some(0.2), rd: Some(0.3) }
        })
        .collect();
    for a in business_metrics_watch(&days, &AlertPolicy::default())? {
        println!("{}", serde_json::to_string(&a).expect("alert serializes"));
    }
    Ok(())
}

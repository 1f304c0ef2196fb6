//! Spherical k-means over preference directions.

use bundlerec::cluster::fit_kmeans;
use bundlerec::rng::derive_stream;
use bundlerec::types::PreferenceVector;

fn main() -> bundlerec::error::Result<()> {
    let mut rng = derive_stream(7, "example", 0);
    let anchors = [[5.0, 1.0, 0.0, 0.0], [0.0, 1.0, 4.0, 1.0], [1.0, 0.0, 1.0, 6.0]];
    let points: Vec<PreferenceVector> = (0..600)
        .map(|i| {
            let a = anchors[i % 3];
            PreferenceVector::new(a.iter().map(|v| (v + rng.normal() * 0.5).max(0.0) + 1e-3).collect())
        })
        .collect::<Result<_, _>>()?;
    for k in 1..=5 {
        let m = fit_kmeans(&points, k, 7, 100, 1e-9)?;
        println!("k = {k}: inertia {:8.3} after {} iterations", m.inertia, m.iterations_run);
    }
    let m = fit_kmeans(&points, 3, 7, 100, 1e-9)?;
    for c in &m.centroids {
        println!("centroid {:.3?}", c);
    }
    Ok(())
}

//! Cosine and angular distances ignore magnitude, so a prediction and any
//! positive multiple of it are served the same bundle.

use bundlerec::geometry::{angular_dist, cos_dist};
use bundlerec::policy::argmin_bundle;
use bundlerec::types::{Bundle, BundlePool, ItemCatalog};

fn main() -> bundlerec::error::Result<()> {
    let catalog = ItemCatalog::uniform(3, 0, 20)?;
    let pool = BundlePool::new(vec![
        Bundle::new(0, vec![10, 0, 0], &catalog)?,
        Bundle::new(1, vec![4, 4, 2], &catalog)?,
        Bundle::new(2, vec![0, 3, 9], &catalog)?,
    ])?;
    let prediction = [0.2, 0.25, 0.1];
    for k in [1e-3, 1.0, 1e3] {
        let scaled: Vec<f64> = prediction.iter().map(|v| v * k).collect();
        let (id, d) = argmin_bundle(&scaled, &pool)?;
        println!("k = {k:>7}: bundle {id}, cos_dist {d:.6}");
    }
    let (a, b) = ([1.0, 0.0, 0.0], [1.0, 1.0, 0.0]);
    println!("cos_dist {:.4}, angular {:.4} rad", cos_dist(&a, &b)?, angular_dist(&a, &b)?);
    Ok(())
}

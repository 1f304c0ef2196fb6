//! Rounds unit centroids to integer bundles within catalog bounds and shows
//! how much direction each rounding loses.

use bundlerec::bundleize::{default_scale_grid, round_to_bundle, ErrorBudget};
use bundlerec::geometry::normalize;
use bundlerec::types::ItemCatalog;

fn main() -> bundlerec::error::Result<()> {
    let catalog = ItemCatalog::uniform(4, 0, 9)?;
    let grid = default_scale_grid();
    for c in [[0.7, 0.7, 0.1, 0.0], [0.31, 0.05, 0.9, 0.2], [0.01, 0.02, 0.03, 1.0]] {
        let u = normalize(&c)?;
        let r = round_to_bundle(&u, &catalog, &grid, 0)?;
        println!("{:.3?} -> {:?} (scale {:.2}, d_o {:.2e})", u, r.bundle.volumes, r.scale_used, r.d_o);
    }

    let truth = [3.0, 2.0, 0.0, 1.0];
    let prediction = [2.5, 2.0, 0.5, 1.0];
    let centroid = normalize(&[0.7, 0.7, 0.1, 0.2])?;
    let bundle = round_to_bundle(&centroid, &catalog, &grid, 0)?.bundle.as_f64();
    let b = ErrorBudget::from_chain(&truth, &prediction, &centroid, &bundle)?;
    println!("d_p {:.4} d_c {:.4} d_o {:.4} -> realized {:.4}", b.d_p, b.d_c, b.d_o, b.realized);
    println!("angular: realized {:.4} <= bound {:.4}", b.realized_angular, b.bound_angular);
    Ok(())
}

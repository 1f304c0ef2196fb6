//! Cosine geometry and the daily engagement metrics built on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BundlePool, EventRecord};

/// Norm guard used wherever a denominator could vanish during training.
pub const NORM_EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine of a zero vector is undefined"));
    }
    if !na.is_finite() || !nb.is_finite() {
        return Err(Error::domain("non-finite vector"));
    }
    Ok((na, nb))
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cos_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = check_pair(a, b)?;
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cos_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cos_sim(a, b)?)
}

/// Angle between `a` and `b`, in `[0, π]`. Unlike [`cos_dist`] this is a
/// metric on directions, so it obeys the triangle inequality.
///
/// Computed as `2 asin(|â - b̂| / 2)`, which stays accurate for nearly
/// parallel vectors where `acos` of a rounded cosine does not.
pub fn angular_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = check_pair(a, b)?;
    let chord = a.iter().zip(b).map(|(x, y)| (x / na - y / nb).powi(2)).sum::<f64>().sqrt();
    Ok(2.0 * (chord / 2.0).clamp(0.0, 1.0).asin())
}

/// Unit-norm copy of `a`.
pub fn normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::domain("cannot normalize a zero or non-finite vector"));
    }
    Ok(a.iter().map(|v| v / n).collect())
}

/// The normalized all-ones direction, the default diversity reference.
pub fn uniform_reference(dim: usize) -> Vec<f64> {
    vec![1.0 / (dim as f64).sqrt(); dim]
}

/// Take-weighted mean cosine distance between pool bundles and `reference`.
///
/// `take_weights[i]` belongs to `pool.bundles()[i]`.
pub fn recommendation_diversity(pool: &BundlePool, take_weights: &[f64], reference: &[f64]) -> Result<f64> {
    if take_weights.len() != pool.len() {
        return Err(Error::domain("one weight per pool bundle required"));
    }
    if take_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::domain("weights must be finite and nonnegative"));
    }
    let total: f64 = take_weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("no takes this day"));
    }
    let mut acc = 0.0;
    for (b, w) in pool.bundles().iter().zip(take_weights) {
        if *w > 0.0 {
            acc += w * cos_dist(&b.as_f64(), reference)?;
        }
    }
    Ok(acc / total)
}

/// Engagement counts and rates for one day (one experiment arm, typically).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub day: u32,
    pub cv: u64,
    pub av: u64,
    pub impressions: u64,
    pub tr: Option<f64>,
    pub cr: Option<f64>,
    pub rd: Option<f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "day,cv,av,impressions,tr,cr,rd";

    pub fn csv_line(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!("{},{},{},{},{},{},{}", self.day, self.cv, self.av, self.impressions, opt(self.tr), opt(self.cr), opt(self.rd))
    }
}

/// Writes reports as CSV with [`MetricReport::CSV_HEADER`].
pub fn metrics_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// CV, AV, TR, CR and RD for one day of events.
///
/// `pool` must contain every bundle that appears in a take; TR and CR are
/// `None` when the day has no impressions and RD is `None` without takes.
pub fn daily_metrics(day: u32, events: &[EventRecord], pool: &BundlePool, reference: &[f64]) -> Result<MetricReport> {
    let mut impressions = 0u64;
    let mut cv = 0u64;
    let mut av = 0u64;
    let mut takes_by_bundle: BTreeMap<u32, f64> = BTreeMap::new();
    for e in events {
        if e.day != day {
            return Err(Error::domain(format!("event from day {} in report for day {day}", e.day)));
        }
        e.check()?;
        impressions += e.impression as u64;
        cv += e.clicked as u64;
        if e.taken {
            av += 1;
            *takes_by_bundle.entry(e.bundle_id).or_default() += 1.0;
        }
    }
    let mut weights = vec![0.0; pool.len()];
    for (id, w) in &takes_by_bundle {
        let pos = pool.position(*id).ok_or_else(|| Error::domain(format!("taken bundle {id} is not in the pool")))?;
        weights[pos] = *w;
    }
    let rd = if av > 0 { Some(recommendation_diversity(pool, &weights, reference)?) } else { None };
    let rate = |n: u64| (impressions > 0).then(|| n as f64 / impressions as f64);
    Ok(MetricReport { day, cv, av, impressions, tr: rate(av), cr: rate(cv), rd })
}

/// Per-capita percentage difference between a treatment and a control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpliftResult {
    pub metric_name: String,
    pub treatment_total: f64,
    pub treatment_size: f64,
    pub control_total: f64,
    pub control_size: f64,
    pub uplift_pct: f64,
}

/// `100 * ((t_total / t_size) / (c_total / c_size) - 1)`.
///
/// Sizes are group sizes for volume metrics; for rate metrics pass the rate's
/// denominator (impressions, takes) so the same formula yields the ratio.
pub fn uplift(metric_name: &str, treatment_total: f64, treatment_size: f64, control_total: f64, control_size: f64) -> Result<UpliftResult> {
    if !(treatment_size > 0.0 && control_size > 0.0) {
        return Err(Error::domain(format!("{metric_name}: group sizes must be positive")));
    }
    let control_pc = control_total / control_size;
    if !(control_pc > 0.0) {
        return Err(Error::domain(format!("{metric_name}: control per-capita value is zero")));
    }
    let treat_pc = treatment_total / treatment_size;
    Ok(UpliftResult {
        metric_name: metric_name.to_string(),
        treatment_total,
        treatment_size,
        control_total,
        control_size,
        uplift_pct: 100.0 * (treat_pc / control_pc - 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Bundle, ItemCatalog, PolicyTag};
    use proptest::prelude::*;

    #[test]
    fn cos_dist_examples() {
        assert_eq!(cos_dist(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let v = [0.3, 2.0, 0.7];
        let w: Vec<f64> = v.iter().map(|x| 3.7 * x).collect();
        assert!(cos_dist(&v, &w).unwrap().abs() < 1e-12);
        let d = cos_dist(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((d - 0.2928932).abs() < 1e-7);
    }

    #[test]
    fn cos_dist_errors() {
        assert!(cos_dist(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cos_dist(&[1.0], &[1.0, 0.0]).is_err());
        assert!(angular_dist(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn angular_examples() {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        assert!((angular_dist(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - FRAC_PI_2).abs() < 1e-12);
        assert!(angular_dist(&[2.0, 1.0], &[4.0, 2.0]).unwrap() < 1e-12);
        assert!(angular_dist(&[0.3, 0.7, 0.1], &[3.0, 7.0, 1.0]).unwrap() < 1e-12);
        assert!((angular_dist(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - FRAC_PI_4).abs() < 1e-12);
    }

    fn pool_of(vols: &[Vec<u32>]) -> BundlePool {
        let cat = ItemCatalog::uniform(vols[0].len(), 0, 100).unwrap();
        BundlePool::new(vols.iter().enumerate().map(|(i, v)| Bundle::new(i as u32, v.clone(), &cat).unwrap()).collect()).unwrap()
    }

    #[test]
    fn diversity_examples() {
        let pool = pool_of(&[vec![1, 2]]);
        let rd = recommendation_diversity(&pool, &[3.0], &[1.0, 2.0]).unwrap();
        assert!(rd.abs() < 1e-12);
        assert!(recommendation_diversity(&pool, &[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn diversity_equal_weights_averages() {
        // [4,3] and [3,4] sit at cos_dist 0.2 and 0.4 from e_0.
        let pool = pool_of(&[vec![4, 3], vec![3, 4]]);
        let rd = recommendation_diversity(&pool, &[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((rd - 0.3).abs() < 1e-12, "{rd}");
    }

    #[test]
    fn daily_metric_counts() {
        let pool = pool_of(&[vec![1, 0], vec![1, 1]]);
        let mut events = Vec::new();
        for i in 0..100u64 {
            events.push(EventRecord {
                day: 4,
                user_id: i,
                bundle_id: (i % 2) as u32,
                impression: true,
                clicked: i < 30,
                taken: i < 12,
                policy_tag: PolicyTag::Model,
            });
        }
        let r = daily_metrics(4, &events, &pool, &uniform_reference(2)).unwrap();
        assert_eq!((r.impressions, r.cv, r.av), (100, 30, 12));
        assert!((r.tr.unwrap() - 0.12).abs() < 1e-15);
        assert!((r.cr.unwrap() - 0.30).abs() < 1e-15);
        // six takes each of [1,0] and [1,1]
        let expected = 0.5 * (1.0 - 1.0 / 2f64.sqrt());
        assert!((r.rd.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_day_has_no_rates() {
        let pool = pool_of(&[vec![1, 0]]);
        let r = daily_metrics(0, &[], &pool, &uniform_reference(2)).unwrap();
        assert_eq!((r.cv, r.av, r.impressions), (0, 0, 0));
        assert_eq!((r.tr, r.cr, r.rd), (None, None, None));
        assert_eq!(r.csv_line(), "0,0,0,0,,,");
    }

    #[test]
    fn wrong_day_is_rejected() {
        let pool = pool_of(&[vec![1, 0]]);
        let e =
            EventRecord { day: 1, user_id: 0, bundle_id: 0, impression: true, clicked: false, taken: false, policy_tag: PolicyTag::Model };
        assert!(daily_metrics(2, &[e], &pool, &uniform_reference(2)).is_err());
    }

    #[test]
    fn uplift_examples() {
        assert_eq!(uplift("AV", 100.0, 10.0, 100.0, 10.0).unwrap().uplift_pct, 0.0);
        let u = uplift("AV", 231.41, 100.0, 100.0, 100.0).unwrap();
        assert!((u.uplift_pct - 131.41).abs() < 1e-9);
        let u = uplift("AV", 59.79, 100.0, 100.0, 100.0).unwrap();
        assert!((u.uplift_pct + 40.21).abs() < 1e-9);
        // group-size scaling: 2x the users, 2x the total => no uplift
        assert!(uplift("AV", 200.0, 20.0, 100.0, 10.0).unwrap().uplift_pct.abs() < 1e-12);
        assert!(uplift("AV", 1.0, 1.0, 0.0, 10.0).is_err());
        assert!(uplift("AV", 1.0, 0.0, 1.0, 10.0).is_err());
    }

    fn positive_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..10.0, d)
    }

    proptest! {
        #[test]
        fn cos_dist_scale_invariant(a in positive_vec(6), b in positive_vec(6), k in 1e-3f64..1e3, m in 1e-3f64..1e3) {
            let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
            let mb: Vec<f64> = b.iter().map(|x| x * m).collect();
            prop_assert!((cos_dist(&a, &b).unwrap() - cos_dist(&ka, &mb).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn angular_triangle_inequality(a in prop::collection::vec(-5f64..5.0, 4),
                                       b in prop::collection::vec(-5f64..5.0, 4),
                                       c in prop::collection::vec(-5f64..5.0, 4)) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3 && norm(&c) > 1e-3);
            let ab = angular_dist(&a, &b).unwrap();
            let bc = angular_dist(&b, &c).unwrap();
            let ac = angular_dist(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn cos_and_angular_order_equivalent(a in positive_vec(5), b in positive_vec(5), c in positive_vec(5)) {
            let (cb, cc) = (cos_dist(&a, &b).unwrap(), cos_dist(&a, &c).unwrap());
            let (ab, ac) = (angular_dist(&a, &b).unwrap(), angular_dist(&a, &c).unwrap());
            if (cb - cc).abs() > 1e-12 {
                prop_assert_eq!(cb < cc, ab < ac);
            }
        }

        #[test]
        fn diversity_matches_resummation(
            vols in prop::collection::vec(prop::collection::vec(0u32..20, 4), 1..8),
            seed_w in prop::collection::vec(0.0f64..5.0, 8),
            reference in positive_vec(4),
            k in 0.01f64..100.0,
        ) {
            let vols: Vec<Vec<u32>> = vols.into_iter().map(|mut v| { if v.iter().all(|x| *x == 0) { v[0] = 1; } v }).collect();
            let pool = pool_of(&vols);
            let w: Vec<f64> = seed_w[..pool.len()].to_vec();
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let rd = recommendation_diversity(&pool, &w, &reference).unwrap();
            // independent oracle: explicit angle-free re-summation
            let mut num = 0.0;
            let mut den = 0.0;
            for (v, wi) in vols.iter().zip(&w) {
                let vf: Vec<f64> = v.iter().map(|x| *x as f64).collect();
                let c = vf.iter().zip(&reference).map(|(x, y)| x * y).sum::<f64>()
                    / (vf.iter().map(|x| x * x).sum::<f64>().sqrt() * reference.iter().map(|x| x * x).sum::<f64>().sqrt());
                num += wi * (1.0 - c);
                den += wi;
            }
            prop_assert!((rd - num / den).abs() < 1e-12);
            let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
            prop_assert!((rd - recommendation_diversity(&pool, &scaled, &reference).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn daily_metrics_match_bruteforce(flags in prop::collection::vec((0u8..3, 0u32..3), 0..200)) {
            let pool = pool_of(&[vec![3, 1], vec![1, 4], vec![2, 2]]);
            let events: Vec<EventRecord> = flags.iter().enumerate().map(|(i, (lvl, b))| EventRecord {
                day: 9,
                user_id: i as u64,
                bundle_id: *b,
                impression: true,
                clicked: *lvl >= 1,
                taken: *lvl >= 2,
                policy_tag: PolicyTag::Model,
            }).collect();
            let r = daily_metrics(9, &events, &pool, &uniform_reference(2)).unwrap();
            let imp = events.len() as u64;
            let clk = events.iter().filter(|e| e.clicked).count() as u64;
            let tk = events.iter().filter(|e| e.taken).count() as u64;
            prop_assert_eq!(r.impressions, imp);
            prop_assert_eq!(r.cv, clk);
            prop_assert_eq!(r.av, tk);
            if imp > 0 {
                prop_assert!((r.tr.unwrap() - tk as f64 / imp as f64).abs() < 1e-15);
                prop_assert!((r.cr.unwrap() - clk as f64 / imp as f64).abs() < 1e-15);
            }
        }
    }
}

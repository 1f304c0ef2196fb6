//! One simulated day: serve every user, sample who shows up and what they do.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Deployment, NoveltyState, World};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm};
use crate::policy::{recommend, PolicyConfig, Recommendation};
use crate::rng::{day_user_index, derive_stream, stable_unit};
use crate::types::{EventRecord, PolicyTag};

/// A group's serving policy and the deployment it draws predictions from.
#[derive(Clone, Debug)]
pub struct Arm {
    pub name: String,
    pub policy: PolicyConfig,
    pub deployment: Arc<Deployment>,
}

/// Items actually bought after a take.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Purchase {
    pub day: u32,
    pub user_id: u64,
    pub bundle_id: u32,
    pub quantities: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DayOutcome {
    pub day: u32,
    /// One event per active user, ordered by user id.
    pub events: Vec<EventRecord>,
    pub purchases: Vec<Purchase>,
    /// Per arm: users in the daily batch, and how many got the fallback.
    pub batch_size: Vec<usize>,
    pub fallback_served: Vec<usize>,
    /// The full recommendation batch, when requested.
    pub batch: Option<Vec<(u64, Recommendation)>>,
}

/// Maps each user to a group by hashing `(salt, user_id)` against the
/// cumulative `fractions`.
pub fn assign_groups(n_users: usize, fractions: &[f64], salt: &str) -> Result<Vec<usize>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::validation("group fractions must be positive and sum to 1"));
    }
    Ok((0..n_users)
        .map(|u| {
            let x = stable_unit(salt, u as u64);
            let mut acc = 0.0;
            for (g, f) in fractions.iter().enumerate() {
                acc += f;
                if x < acc {
                    return g;
                }
            }
            fractions.len() - 1
        })
        .collect())
}

/// Simulates `day` for every user; `groups[u]` picks the user's arm.
pub fn step_day(
    world: &World,
    arms: &[Arm],
    groups: &[usize],
    novelty: &mut NoveltyState,
    day: u32,
    keep_batch: bool,
) -> Result<DayOutcome> {
    if groups.len() != world.n_users() {
        return Err(Error::domain("group assignment does not cover the population"));
    }
    let behavior = &world.config.behavior;
    let mut out = DayOutcome {
        day,
        batch_size: vec![0; arms.len()],
        fallback_served: vec![0; arms.len()],
        batch: keep_batch.then(Vec::new),
        ..DayOutcome::default()
    };
    for (u, &g) in groups.iter().enumerate() {
        let arm = arms.get(g).ok_or_else(|| Error::domain(format!("user {u} assigned to missing group {g}")))?;
        let user = &world.users[u];
        let mut rng = derive_stream(world.config.seed, "day", day_user_index(day, u as u64));
        let active = rng.chance(user.activity_rate);
        let rec = recommend(arm.deployment.predictions[u].as_ref(), &arm.deployment.serving, &arm.policy, &mut rng)?;
        out.batch_size[g] += 1;
        if rec.provenance == PolicyTag::Fallback {
            out.fallback_served[g] += 1;
        }
        if active {
            let bundle = arm
                .deployment
                .serving
                .find(rec.bundle_id)
                .ok_or_else(|| Error::domain(format!("served unknown bundle {}", rec.bundle_id)))?;
            let volumes = bundle.as_f64();
            let latent = world.latents[u].values();
            let relevance = dot(latent, &volumes) / norm(&volumes);
            let m = novelty.expose(behavior, g, rec.bundle_id, day);
            let x = rng.uniform();
            let clicked = x < behavior.click_prob(relevance, m);
            let taken = x < behavior.take_prob(relevance, m);
            let event = EventRecord {
                day,
                user_id: u as u64,
                bundle_id: rec.bundle_id,
                impression: true,
                clicked,
                taken,
                policy_tag: rec.provenance,
            };
            event.check()?;
            out.events.push(event);
            if taken {
                let sd = behavior.purchase_noise_sd;
                let total: f64 = volumes.iter().sum();
                let quantities = volumes
                    .iter()
                    .zip(latent)
                    .map(|(v, p)| (v * (sd * rng.normal() - 0.5 * sd * sd).exp() + behavior.taste_pull * p * total).round() as u32)
                    .collect();
                out.purchases.push(Purchase { day, user_id: u as u64, bundle_id: rec.bundle_id, quantities });
            }
        }
        if let Some(b) = out.batch.as_mut() {
            b.push((u as u64, rec));
        }
    }
    Ok(out)
}

/// Writes events as JSON lines.
pub fn write_events_jsonl<W: Write>(mut out: W, events: &[EventRecord]) -> Result<()> {
    for e in events {
        e.check()?;
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

//! Scale-invariant bundle recommendation.
//!
//! The pipeline predicts a per-user item-preference *direction* with a
//! cosine-loss regressor ([`model`]), discretizes predicted directions with
//! spherical k-means ([`cluster`]), and rounds each centroid to an integer
//! bundle ([`bundleize`]). [`policy`] serves bundles, [`sim`] provides a
//! synthetic player population, [`experiment`] runs A/B tests against it,
//! and [`monitor`] watches drift and business metrics.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundleize;
pub mod cluster;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod model;
pub mod monitor;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod types;

pub use error::{Error, Result};

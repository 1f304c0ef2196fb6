//! Trains the attentive regressor and the ridge baseline on a synthetic
//! population and compares them on held-out users.

use bundlerec::experiment::{offline_eval, training_rows};
use bundlerec::model::{AggregationRule, AttentiveRegressor, AttentiveRegressorConfig, ConstantPredictor, LinearBaseline};
use bundlerec::sim::{World, WorldConfig};

fn main() -> bundlerec::error::Result<()> {
    let world = World::generate(&WorldConfig { n_users: 3000, ..WorldConfig::default() })?;
    let (train, test) = world.split_users(0.2);
    let rows = training_rows(&world, train, 30, 30, 4000);
    let held_out = world.dataset(test, 30, AggregationRule::Evaluation).rows;

    let model = AttentiveRegressor::train(&rows, &AttentiveRegressorConfig { epochs: 30, ..Default::default() })?;
    let ridge = LinearBaseline::train(&rows, 1e-3)?;
    let constant = ConstantPredictor::mean_direction(&rows)?;
    println!("{} training rows, {} held out", rows.len(), held_out.len());
    println!("attentive {:.4}", offline_eval(&model, &held_out)?);
    println!("ridge     {:.4}", offline_eval(&ridge, &held_out)?);
    println!("constant  {:.4}", offline_eval(&constant, &held_out)?);

    let sample: Vec<Vec<f64>> = rows.iter().take(500).map(|r| r.features.clone()).collect();
    let importance = model.feature_importance(&sample)?;
    let mut top: Vec<(usize, f64)> = importance.0.iter().copied().enumerate().collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("most used features: {:?}", &top[..5]);
    Ok(())
}

//! Ridge-regularized linear baseline.
//!
//! Fits `W` minimizing `mean ||W [x; 1] - t/||t|| ||^2 + lambda ||W_x||^2` in
//! closed form, then serves `max(W [x; 1], 0)`. When every coordinate is
//! clipped the training mean direction is served instead, so predictions are
//! always nonzero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_rows, Predictor, Standardizer};
use crate::error::{Error, Result};
use crate::geometry::normalize;
use crate::types::{FeatureRow, PreferenceVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBaseline {
    pub ridge_lambda: f64,
    pub standardizer: Standardizer,
    /// `targets x (features + 1)`, row-major; the last column is the bias.
    weights: Vec<f64>,
    features: usize,
    targets: usize,
    fallback: Vec<f64>,
}

impl LinearBaseline {
    pub fn train(rows: &[FeatureRow], ridge_lambda: f64) -> Result<Self> {
        if !(ridge_lambda >= 0.0) {
            return Err(Error::validation("ridge_lambda must be >= 0"));
        }
        let (f, d) = check_rows(rows)?;
        let feats: Vec<&[f64]> = rows.iter().map(|r| r.features.as_slice()).collect();
        let standardizer = Standardizer::fit(&feats);
        let n = rows.len();
        let x = DMatrix::from_fn(
            n,
            f + 1,
            |i, j| {
                if j == f {
                    1.0
                } else {
                    (rows[i].features[j] - standardizer.mean[j]) / standardizer.std[j]
                }
            },
        );
        let targets: Vec<Vec<f64>> = rows.iter().map(|r| normalize(r.label.values())).collect::<Result<_>>()?;
        let t = DMatrix::from_fn(n, d, |i, j| targets[i][j]);
        let nf = n as f64;
        let mut gram = x.transpose() * &x / nf;
        for j in 0..f {
            gram[(j, j)] += ridge_lambda;
        }
        let rhs = x.transpose() * &t / nf;
        let sol = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs).ok_or_else(|| Error::Training("singular normal equations; increase ridge_lambda".into()))?,
        };
        let mut weights = vec![0.0; d * (f + 1)];
        for i in 0..d {
            for j in 0..=f {
                weights[i * (f + 1) + j] = sol[(j, i)];
            }
        }
        let mut mean = vec![0.0; d];
        for t in &targets {
            mean.iter_mut().zip(t).for_each(|(a, v)| *a += v);
        }
        Ok(LinearBaseline { ridge_lambda, standardizer, weights, features: f, targets: d, fallback: normalize(&mean)? })
    }

    /// Structural check for models read back from disk.
    pub fn validate(&self) -> Result<()> {
        let (f, d) = (self.features, self.targets);
        if f == 0 || d == 0 || self.weights.len() != d * (f + 1) || self.fallback.len() != d {
            return Err(Error::validation("linear model: shape mismatch"));
        }
        if self.standardizer.mean.len() != f || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::validation("linear model: malformed weights"));
        }
        Ok(())
    }

    fn raw(&self, weights: &[f64], xs: &[f64]) -> Vec<f64> {
        let f = self.features;
        (0..self.targets)
            .map(|i| {
                let row = &weights[i * (f + 1)..(i + 1) * (f + 1)];
                row[f] + row[..f].iter().zip(xs).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Ridge objective at `weights` on `rows`.
    pub fn objective(&self, weights: &[f64], rows: &[FeatureRow]) -> Result<f64> {
        let f = self.features;
        let mut acc = 0.0;
        for r in rows {
            let t = normalize(r.label.values())?;
            let y = self.raw(weights, &self.standardizer.apply(&r.features));
            acc += y.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let mut reg = 0.0;
        for i in 0..self.targets {
            reg += weights[i * (f + 1)..i * (f + 1) + f].iter().map(|w| w * w).sum::<f64>();
        }
        Ok(acc / rows.len() as f64 + self.ridge_lambda * reg)
    }

    /// Analytic gradient of [`Self::objective`].
    pub fn objective_gradient(&self, weights: &[f64], rows: &[FeatureRow]) -> Result<Vec<f64>> {
        let f = self.features;
        let mut g = vec![0.0; weights.len()];
        let k = 2.0 / rows.len() as f64;
        for r in rows {
            let t = normalize(r.label.values())?;
            let xs = self.standardizer.apply(&r.features);
            let y = self.raw(weights, &xs);
            for i in 0..self.targets {
                let e = k * (y[i] - t[i]);
                let row = i * (f + 1);
                for j in 0..f {
                    g[row + j] += e * xs[j];
                }
                g[row + f] += e;
            }
        }
        for i in 0..self.targets {
            for j in 0..f {
                g[i * (f + 1) + j] += 2.0 * self.ridge_lambda * weights[i * (f + 1) + j];
            }
        }
        Ok(g)
    }

    /// Max relative error between [`Self::objective_gradient`] and central
    /// differences, evaluated at `weights`.
    pub fn grad_check(&self, weights: &[f64], rows: &[FeatureRow], epsilon: f64) -> Result<f64> {
        if !(1e-7..=1e-3).contains(&epsilon) {
            return Err(Error::domain("grad_check epsilon must be in [1e-7, 1e-3]"));
        }
        if weights.len() != self.weights.len() {
            return Err(Error::domain("weight vector has the wrong length"));
        }
        let analytic = self.objective_gradient(weights, rows)?;
        let mut w = weights.to_vec();
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            let orig = w[i];
            w[i] = orig + epsilon;
            let up = self.objective(&w, rows)?;
            w[i] = orig - epsilon;
            let down = self.objective(&w, rows)?;
            w[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max((analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8));
        }
        Ok(worst)
    }
}

impl Predictor for LinearBaseline {
    fn feature_dim(&self) -> usize {
        self.features
    }

    fn predict(&self, features: &[f64]) -> Result<PreferenceVector> {
        if features.len() != self.features {
            return Err(Error::domain(format!("expected {} features, got {}", self.features, features.len())));
        }
        let y: Vec<f64> = self.raw(&self.weights, &self.standardizer.apply(features)).into_iter().map(|v| v.max(0.0)).collect();
        if y.iter().all(|v| *v == 0.0) {
            return PreferenceVector::new(self.fallback.clone());
        }
        PreferenceVector::new(y)
    }
}

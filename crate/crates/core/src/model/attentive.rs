//! A compact attentive tabular regressor.
//!
//! Each of `steps` decision steps computes an instance-wise softmax mask over
//! the input features. The mask is modulated by a prior that shrinks for
//! features already used (`prior *= relax_gamma - mask`), gates the input, and
//! feeds a one-layer tanh transformer. Step outputs are summed and mapped to a
//! nonnegative D-vector through a softplus head. The training loss is the mean
//! cosine distance to the label plus `sparsity_coeff` times the mean mask
//! entropy. Gradients are computed by hand; [`AttentiveRegressor::grad_check`]
//! compares them against central finite differences.

use serde::{Deserialize, Serialize};

use super::{check_rows, Predictor, Standardizer};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, normalize, NORM_EPS};
use crate::rng::derive_stream;
use crate::types::{FeatureRow, PreferenceVector};

const ENTROPY_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRateSchedule {
    pub initial: f64,
    /// Multiplicative decay applied once per epoch.
    pub decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentiveRegressorConfig {
    pub steps: usize,
    pub hidden_dim: usize,
    pub relax_gamma: f64,
    pub sparsity_coeff: f64,
    pub learning_rate: LearningRateSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of rows held out for checkpoint selection and `d_p`.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for AttentiveRegressorConfig {
    fn default() -> Self {
        AttentiveRegressorConfig {
            steps: 3,
            hidden_dim: 24,
            relax_gamma: 1.5,
            sparsity_coeff: 1e-3,
            learning_rate: LearningRateSchedule { initial: 0.2, decay: 0.97 },
            epochs: 60,
            batch_size: 32,
            validation_fraction: 0.2,
            seed: 7,
        }
    }
}

impl AttentiveRegressorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("model config: {m}")));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if !(self.relax_gamma >= 1.0) {
            return bad("relax_gamma must be >= 1");
        }
        if !(self.sparsity_coeff >= 0.0) {
            return bad("sparsity_coeff must be >= 0");
        }
        if !(self.learning_rate.initial > 0.0) || !(self.learning_rate.decay > 0.0 && self.learning_rate.decay <= 1.0) {
            return bad("learning_rate.initial must be > 0 and decay in (0, 1]");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(0.0..=0.9).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 0.9]");
        }
        Ok(())
    }
}

/// Per-feature share of attention mass; sums to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureImportance(pub Vec<f64>);

impl FeatureImportance {
    pub fn l1_distance(&self, other: &FeatureImportance) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs_run: usize,
    pub n_train: usize,
    pub n_validation: usize,
    /// Mean regularized loss over each epoch's mini-batches.
    pub train_loss_trace: Vec<f64>,
    /// Held-out mean cosine distance after each epoch.
    pub validation_trace: Vec<f64>,
    /// Held-out loss of the retained checkpoint after each epoch.
    pub best_validation_trace: Vec<f64>,
    pub best_epoch: usize,
    /// Held-out mean cosine distance of the returned weights.
    pub final_mean_cos_dist: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Dims {
    features: usize,
    hidden: usize,
    targets: usize,
    steps: usize,
}

#[derive(Clone, Copy, Debug)]
struct StepOffsets {
    att_w: usize,
    att_b: usize,
    ff_w: usize,
    ff_b: usize,
    att_in: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    steps: Vec<StepOffsets>,
    out_w: usize,
    out_b: usize,
    len: usize,
}

impl Dims {
    fn layout(&self) -> Layout {
        let (f, h) = (self.features, self.hidden);
        let mut off = 0;
        let mut steps = Vec::with_capacity(self.steps);
        for s in 0..self.steps {
            let att_in = if s == 0 { f } else { h };
            let att_w = off;
            off += f * att_in;
            let att_b = off;
            off += f;
            let ff_w = off;
            off += h * f;
            let ff_b = off;
            off += h;
            steps.push(StepOffsets { att_w, att_b, ff_w, ff_b, att_in });
        }
        let out_w = off;
        off += self.targets * h;
        let out_b = off;
        off += self.targets;
        Layout { steps, out_w, out_b, len: off }
    }
}

/// Forward-pass intermediates for one sample.
struct Trace {
    z_in: Vec<Vec<f64>>,
    exps: Vec<Vec<f64>>,
    denoms: Vec<f64>,
    masks: Vec<Vec<f64>>,
    priors: Vec<Vec<f64>>,
    gated: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    agg: Vec<f64>,
    q: Vec<f64>,
    y: Vec<f64>,
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentiveRegressor {
    pub config: AttentiveRegressorConfig,
    dims: Dims,
    pub standardizer: Standardizer,
    params: Vec<f64>,
    pub training_report: TrainingReport,
}

impl AttentiveRegressor {
    /// Untrained model: attention weights zero (uniform masks), transformer
    /// and head weights drawn from the seeded stream, head bias pointing at
    /// `initial_direction` when given.
    pub fn init(
        feature_dim: usize,
        target_dim: usize,
        config: &AttentiveRegressorConfig,
        initial_direction: Option<&[f64]>,
    ) -> Result<Self> {
        config.validate()?;
        let dims = Dims { features: feature_dim, hidden: config.hidden_dim, targets: target_dim, steps: config.steps };
        let lay = dims.layout();
        let mut params = vec![0.0; lay.len];
        let mut rng = derive_stream(config.seed, "model-init", 0);
        for s in &lay.steps {
            let scale = (1.0 / feature_dim as f64).sqrt();
            for w in &mut params[s.ff_w..s.ff_w + dims.hidden * feature_dim] {
                *w = rng.normal() * scale;
            }
        }
        let scale = 0.1 * (1.0 / (dims.hidden * dims.steps) as f64).sqrt();
        for w in &mut params[lay.out_w..lay.out_w + target_dim * dims.hidden] {
            *w = rng.normal() * scale;
        }
        if let Some(dir) = initial_direction {
            let max = dir.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                for (j, v) in dir.iter().enumerate() {
                    params[lay.out_b + j] = inv_softplus((v / max).max(1e-3));
                }
            }
        }
        Ok(AttentiveRegressor {
            config: config.clone(),
            dims,
            standardizer: Standardizer::identity(feature_dim),
            params,
            training_report: TrainingReport::default(),
        })
    }

    /// Fits a model on `rows`, holding out `validation_fraction` of them for
    /// checkpoint selection. The returned weights are the best checkpoint.
    pub fn train(rows: &[FeatureRow], config: &AttentiveRegressorConfig) -> Result<Self> {
        config.validate()?;
        let (f, d) = check_rows(rows)?;
        let n = rows.len();
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, config.seed, "model-split", 0);
        let n_val = if n >= 5 { ((n as f64) * config.validation_fraction).round() as usize } else { 0 };
        let n_val = n_val.min(n - 1);
        let (val_idx, train_idx) = order.split_at(n_val);
        let val_idx = if val_idx.is_empty() { train_idx } else { val_idx };

        let train_feats: Vec<&[f64]> = train_idx.iter().map(|&i| rows[i].features.as_slice()).collect();
        let standardizer = Standardizer::fit(&train_feats);
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(&r.features)).collect();
        let ts: Vec<Vec<f64>> = rows.iter().map(|r| normalize(r.label.values())).collect::<Result<_>>()?;

        let mut mean_dir = vec![0.0; d];
        for &i in train_idx {
            mean_dir.iter_mut().zip(&ts[i]).for_each(|(a, v)| *a += v);
        }
        let mut model = AttentiveRegressor::init(f, d, config, Some(&mean_dir))?;
        model.standardizer = standardizer;

        let mut report = TrainingReport { n_train: train_idx.len(), n_validation: val_idx.len(), ..Default::default() };
        let mut best = model.mean_cos_on(&xs, &ts, val_idx);
        let mut best_params = model.params.clone();
        let mut grad = vec![0.0; model.params.len()];
        let mut shuffled = train_idx.to_vec();

        for epoch in 0..config.epochs {
            let lr = config.learning_rate.initial * config.learning_rate.decay.powi(epoch as i32);
            shuffle(&mut shuffled, config.seed, "model-shuffle", epoch as u64);
            let mut epoch_loss = 0.0;
            for (b, batch) in shuffled.chunks(config.batch_size).enumerate() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut batch_loss = 0.0;
                for &i in batch {
                    batch_loss += model.backward(&xs[i], &ts[i], &mut grad);
                }
                let k = 1.0 / batch.len() as f64;
                if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Training(format!("loss diverged (non-finite) at epoch {epoch}, batch {b}, learning rate {lr}")));
                }
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= lr * g * k;
                }
                if model.params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Training(format!("weights became non-finite at epoch {epoch}, batch {b}, learning rate {lr}")));
                }
                epoch_loss += batch_loss;
            }
            report.train_loss_trace.push(epoch_loss / shuffled.len() as f64);
            let val = model.mean_cos_on(&xs, &ts, val_idx);
            if !val.is_finite() {
                return Err(Error::Training(format!("validation loss is non-finite after epoch {epoch}")));
            }
            report.validation_trace.push(val);
            if val < best {
                best = val;
                best_params.clone_from(&model.params);
                report.best_epoch = epoch + 1;
            }
            report.best_validation_trace.push(best);
            report.epochs_run = epoch + 1;
        }
        model.params = best_params;
        report.final_mean_cos_dist = best;
        model.training_report = report;
        Ok(model)
    }

    fn mean_cos_on(&self, xs: &[Vec<f64>], ts: &[Vec<f64>], idx: &[usize]) -> f64 {
        let mut acc = 0.0;
        for &i in idx {
            let tr = self.forward(&xs[i]);
            acc += 1.0 - dot(&ts[i], &tr.y) / (norm(&ts[i]).max(NORM_EPS) * norm(&tr.y).max(NORM_EPS));
        }
        acc / idx.len() as f64
    }

    /// Structural check for models read back from disk.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let d = &self.dims;
        if d.features == 0 || d.targets == 0 || d.steps != self.config.steps || d.hidden != self.config.hidden_dim {
            return Err(Error::validation("attentive model: dimensions disagree with config"));
        }
        if self.params.len() != d.layout().len || self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("attentive model: parameter vector malformed"));
        }
        if self.standardizer.mean.len() != d.features || self.standardizer.std.len() != d.features {
            return Err(Error::validation("attentive model: standardizer width mismatch"));
        }
        Ok(())
    }

    pub fn target_dim(&self) -> usize {
        self.dims.targets
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let Dims { features: f, hidden: h, targets: d, steps } = self.dims;
        let lay = self.dims.layout();
        let p = &self.params;
        let gamma = self.config.relax_gamma;
        let fscale = f as f64;
        let mut tr = Trace {
            z_in: Vec::with_capacity(steps),
            exps: Vec::with_capacity(steps),
            denoms: Vec::with_capacity(steps),
            masks: Vec::with_capacity(steps),
            priors: Vec::with_capacity(steps),
            gated: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
            agg: vec![0.0; h],
            q: vec![0.0; d],
            y: vec![0.0; d],
        };
        let mut prior = vec![1.0; f];
        let mut z = x.to_vec();
        for o in &lay.steps {
            let logits: Vec<f64> =
                (0..f).map(|j| p[o.att_b + j] + dot(&p[o.att_w + j * o.att_in..o.att_w + (j + 1) * o.att_in], &z)).collect();
            let lmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - lmax).exp()).collect();
            let denom: f64 = exps.iter().zip(&prior).map(|(e, pr)| e * pr).sum();
            let mask: Vec<f64> = exps.iter().zip(&prior).map(|(e, pr)| e * pr / denom).collect();
            let gated: Vec<f64> = mask.iter().zip(x).map(|(m, v)| fscale * m * v).collect();
            let hidden: Vec<f64> = (0..h).map(|k| (p[o.ff_b + k] + dot(&p[o.ff_w + k * f..o.ff_w + (k + 1) * f], &gated)).tanh()).collect();
            for (a, v) in tr.agg.iter_mut().zip(&hidden) {
                *a += v;
            }
            let next_prior: Vec<f64> = prior.iter().zip(&mask).map(|(pr, m)| pr * (gamma - m)).collect();
            tr.z_in.push(std::mem::replace(&mut z, hidden.clone()));
            tr.exps.push(exps);
            tr.denoms.push(denom);
            tr.masks.push(mask);
            tr.priors.push(std::mem::replace(&mut prior, next_prior));
            tr.gated.push(gated);
            tr.hidden.push(hidden);
        }
        for i in 0..d {
            tr.q[i] = p[lay.out_b + i] + dot(&p[lay.out_w + i * h..lay.out_w + (i + 1) * h], &tr.agg);
            tr.y[i] = softplus(tr.q[i]);
        }
        tr
    }

    fn entropy_term(&self, tr: &Trace) -> f64 {
        let lam = self.config.sparsity_coeff / self.dims.steps as f64;
        if lam == 0.0 {
            return 0.0;
        }
        lam * tr.masks.iter().flatten().map(|m| -m * (m + ENTROPY_EPS).ln()).sum::<f64>()
    }

    /// Per-sample loss: cosine distance to `t` plus the entropy regularizer.
    fn sample_loss(&self, x: &[f64], t: &[f64]) -> f64 {
        let tr = self.forward(x);
        let c = dot(t, &tr.y) / (norm(t).max(NORM_EPS) * norm(&tr.y).max(NORM_EPS));
        1.0 - c + self.entropy_term(&tr)
    }

    /// Accumulates the gradient of the per-sample loss into `grad` and
    /// returns the loss.
    fn backward(&self, x: &[f64], t: &[f64], grad: &mut [f64]) -> f64 {
        let Dims { features: f, hidden: h, targets: d, steps } = self.dims;
        let lay = self.dims.layout();
        let p = &self.params;
        let gamma = self.config.relax_gamma;
        let lam = self.config.sparsity_coeff / steps as f64;
        let fscale = f as f64;
        let tr = self.forward(x);

        let ny = norm(&tr.y).max(NORM_EPS);
        let nt = norm(t).max(NORM_EPS);
        let c = dot(t, &tr.y) / (nt * ny);
        let loss = 1.0 - c + self.entropy_term(&tr);

        let mut dagg = vec![0.0; h];
        for i in 0..d {
            let dy = -(t[i] / (nt * ny) - c * tr.y[i] / (ny * ny));
            let dq = dy * sigmoid(tr.q[i]);
            grad[lay.out_b + i] += dq;
            let row = lay.out_w + i * h;
            for k in 0..h {
                grad[row + k] += dq * tr.agg[k];
                dagg[k] += p[row + k] * dq;
            }
        }

        let mut dprior_next = vec![0.0; f];
        let mut dh_carry = vec![0.0; h];
        for s in (0..steps).rev() {
            let o = lay.steps[s];
            let (mask, prior, hid) = (&tr.masks[s], &tr.priors[s], &tr.hidden[s]);
            let mut dgated = vec![0.0; f];
            for k in 0..h {
                let dpre = (dagg[k] + dh_carry[k]) * (1.0 - hid[k] * hid[k]);
                grad[o.ff_b + k] += dpre;
                let row = o.ff_w + k * f;
                for j in 0..f {
                    grad[row + j] += dpre * tr.gated[s][j];
                    dgated[j] += p[row + j] * dpre;
                }
            }
            let dmask: Vec<f64> = (0..f)
                .map(|j| {
                    let mut g = dgated[j] * fscale * x[j] - prior[j] * dprior_next[j];
                    if lam != 0.0 {
                        g += lam * (-(mask[j] + ENTROPY_EPS).ln() - mask[j] / (mask[j] + ENTROPY_EPS));
                    }
                    g
                })
                .collect();
            let gbar: f64 = dmask.iter().zip(mask).map(|(g, m)| g * m).sum();
            let z_in = &tr.z_in[s];
            let mut dz = vec![0.0; o.att_in];
            let mut dprior = vec![0.0; f];
            for j in 0..f {
                let centered = dmask[j] - gbar;
                let dl = mask[j] * centered;
                dprior[j] = dprior_next[j] * (gamma - mask[j]) + tr.exps[s][j] / tr.denoms[s] * centered;
                grad[o.att_b + j] += dl;
                let row = o.att_w + j * o.att_in;
                for i in 0..o.att_in {
                    grad[row + i] += dl * z_in[i];
                    dz[i] += p[row + i] * dl;
                }
            }
            dprior_next = dprior;
            if s > 0 {
                dh_carry = dz;
            }
        }
        loss
    }

    /// Gradient of the mean per-sample loss over `rows` (features are
    /// standardized with the model's own standardizer).
    pub fn analytic_gradient(&self, rows: &[FeatureRow]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        for r in rows {
            let t = normalize(r.label.values())?;
            self.backward(&self.standardizer.apply(&r.features), &t, &mut grad);
        }
        let k = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= k);
        Ok(grad)
    }

    fn mean_loss(&self, xs: &[Vec<f64>], ts: &[Vec<f64>]) -> f64 {
        xs.iter().zip(ts).map(|(x, t)| self.sample_loss(x, t)).sum::<f64>() / xs.len() as f64
    }

    /// Largest relative disagreement between the analytic gradient and
    /// central finite differences with step `epsilon`, over every weight.
    ///
    /// The relative error of one coordinate is `|a - n| / max(|a| + |n|, 1e-8)`.
    pub fn grad_check(&self, rows: &[FeatureRow], epsilon: f64) -> Result<f64> {
        if !(1e-7..=1e-3).contains(&epsilon) {
            return Err(Error::domain("grad_check epsilon must be in [1e-7, 1e-3]"));
        }
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| self.standardizer.apply(&r.features)).collect();
        let ts: Vec<Vec<f64>> = rows.iter().map(|r| normalize(r.label.values())).collect::<Result<_>>()?;
        let analytic = self.analytic_gradient(rows)?;
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for i in 0..self.params.len() {
            let orig = probe.params[i];
            probe.params[i] = orig + epsilon;
            let up = probe.mean_loss(&xs, &ts);
            probe.params[i] = orig - epsilon;
            let down = probe.mean_loss(&xs, &ts);
            probe.params[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
        Ok(worst)
    }

    /// Per-sample, per-step attention masks for one raw feature row.
    pub fn masks(&self, features: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(features)?;
        Ok(self.forward(&self.standardizer.apply(features)).masks)
    }

    /// Mean attention mask over steps and `sample`, normalized to a simplex.
    pub fn feature_importance(&self, sample: &[Vec<f64>]) -> Result<FeatureImportance> {
        if sample.is_empty() {
            return Err(Error::domain("feature importance needs a nonempty sample"));
        }
        let mut acc = vec![0.0; self.dims.features];
        for x in sample {
            for m in self.masks(x)? {
                acc.iter_mut().zip(&m).for_each(|(a, v)| *a += v);
            }
        }
        let total: f64 = acc.iter().sum();
        Ok(FeatureImportance(acc.into_iter().map(|a| a / total).collect()))
    }

    fn check_len(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dims.features {
            return Err(Error::domain(format!("expected {} features, got {}", self.dims.features, features.len())));
        }
        Ok(())
    }

    /// Copy with every weight drawn at random (attention included), for
    /// gradient checks away from the symmetric initialization.
    pub fn randomized(&self, seed: u64, scale: f64) -> Self {
        let mut out = self.clone();
        let mut rng = derive_stream(seed, "model-randomize", 0);
        for p in &mut out.params {
            *p = rng.normal() * scale;
        }
        out
    }
}

impl Predictor for AttentiveRegressor {
    fn feature_dim(&self) -> usize {
        self.dims.features
    }

    fn predict(&self, features: &[f64]) -> Result<PreferenceVector> {
        self.check_len(features)?;
        let y = self.forward(&self.standardizer.apply(features)).y;
        if y.iter().all(|v| *v == 0.0) {
            return Err(Error::domain("prediction underflowed to the zero vector"));
        }
        PreferenceVector::new(y)
    }
}

pub(crate) fn shuffle(idx: &mut [usize], seed: u64, purpose: &str, index: u64) {
    let mut rng = derive_stream(seed, purpose, index);
    for i in (1..idx.len()).rev() {
        let j = rng.below(i + 1);
        idx.swap(i, j);
    }
}

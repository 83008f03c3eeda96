//! Weighted cross-entropy, Adam, and the mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalScores, DEFAULT_THRESHOLD};
use crate::models::{forward, Mode, Model, ModelConfig, ModelParams};
use crate::params::Role;
use crate::time_embedding::{TimeEmbedConfig, TimeUnit};

/// Predictions are kept this far from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight on the positive class.
    pub delta: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.001,
            delta: 0.7,
            l2_lambda: 0.0,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(Error::Config(format!(
                "l2_lambda must be non-negative, got {}",
                self.l2_lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let betas = [self.adam_beta1, self.adam_beta2];
        if betas.iter().any(|b| !(0.0..1.0).contains(b)) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// `-(1/N) Σ [δ y ln y' + (1-δ)(1-y) ln(1-y')]` with clamped predictions.
pub fn weighted_bce(y: &[u8], y_hat: &[f64], delta: f64) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::dim("weighted_bce", &[y.len()], &[y_hat.len()]));
    }
    if y.is_empty() {
        return Err(Error::Contract("weighted_bce needs at least one prediction".into()));
    }
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&label, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if label != 0 {
                delta * p.ln()
            } else {
                (1.0 - delta) * (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-total / y.len() as f64)
}

/// Graph form of [`weighted_bce`] over scalar predictions.
pub fn weighted_bce_var(g: &mut Graph, y: &[u8], y_hat: &[Var], delta: f64) -> Result<Var> {
    if y.len() != y_hat.len() {
        return Err(Error::dim("weighted_bce", &[y.len()], &[y_hat.len()]));
    }
    if y.is_empty() {
        return Err(Error::Contract("weighted_bce needs at least one prediction".into()));
    }
    let mut terms = Vec::with_capacity(y.len());
    for (&label, &p) in y.iter().zip(y_hat) {
        let p = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let term = if label != 0 {
            let lp = g.ln(p);
            g.affine(lp, delta, 0.0)
        } else {
            let q = g.affine(p, -1.0, 1.0);
            let lq = g.ln(q);
            g.affine(lq, 1.0 - delta, 0.0)
        };
        terms.push(term);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(g.affine(total, -1.0 / y.len() as f64, 0.0))
}

/// `Σ ‖W‖²` over weight leaves only.
pub fn l2_penalty(g: &mut Graph, p: &ModelParams<Var>) -> Result<Option<Var>> {
    let mut weights = Vec::new();
    p.visit("", &mut |_, role, &v| {
        if role == Role::Weight {
            weights.push(v);
        }
    });
    let mut total: Option<Var> = None;
    for w in weights {
        let sq = g.mul(w, w)?;
        let s = g.sum(sq);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    Ok(total)
}

/// First and second moments per parameter leaf, in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, _, t| m.push(Tensor::zeros(t.shape())));
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Fails before touching anything if a
/// gradient is not finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut flat = Vec::new();
    let mut bad = None;
    grads.visit("", &mut |name, _, g| {
        if bad.is_none() && !g.is_finite() {
            bad = Some(name.to_string());
        }
        flat.push(g.clone());
    });
    if let Some(name) = bad {
        return Err(Error::Numeric(format!("non-finite gradient for parameter {name}")));
    }
    if flat.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} optimizer slots",
            flat.len(),
            state.m.len()
        )));
    }

    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let mut idx = 0;
    let mut mismatch = None;
    params.visit_mut("", &mut |name, _, p| {
        let g = &flat[idx];
        if g.shape() != p.shape() {
            mismatch.get_or_insert_with(|| name.to_string());
            idx += 1;
            return;
        }
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        idx += 1;
    });
    match mismatch {
        Some(name) => Err(Error::Contract(format!("gradient shape differs for parameter {name}"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch objectives.
    pub loss: f64,
    pub validation: Option<EvalScores>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_f2,val_sensitivity,val_auc\n");
        for e in &self.epochs {
            let (f2, sens, auc) = match &e.validation {
                Some(s) => (
                    s.f2.to_string(),
                    s.sensitivity.to_string(),
                    s.auc.map_or_else(|| "undefined".into(), |a| a.to_string()),
                ),
                None => Default::default(),
            };
            out.push_str(&format!("{},{},{f2},{sens},{auc}\n", e.epoch, e.loss));
        }
        out
    }
}

/// Every sample must match the model's window shape and demographics.
fn check_samples(model: &Model, samples: &[WindowedSample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let m = first.x.rows();
    for s in samples {
        if s.x.rows() != m {
            return Err(Error::Data(format!(
                "mixed window lengths: patient {} has {} visits, expected {m}",
                s.patient_id,
                s.x.rows()
            )));
        }
        if s.x.cols() != model.config.n_features {
            return Err(Error::Data(format!(
                "patient {} has {} features, model expects {}",
                s.patient_id,
                s.x.cols(),
                model.config.n_features
            )));
        }
        if s.demographics.len() != model.config.demographic_size {
            return Err(Error::Data(format!(
                "patient {} has {} demographics, model expects {}",
                s.patient_id,
                s.demographics.len(),
                model.config.demographic_size
            )));
        }
    }
    Ok(())
}

/// Batch objective on a fresh graph; returns the graph, bound parameters
/// and loss handle.
pub fn batch_objective(
    model: &Model,
    batch: &[&WindowedSample],
    cfg: &TrainConfig,
    mode: &mut Mode<'_>,
) -> Result<(Graph, ModelParams<Var>, Var)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let mut preds = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for s in batch {
        let out = forward(&mut g, &model.config, &model.time, model.unit, &p, s.inputs(), mode)?;
        preds.push(out.y_hat);
        labels.push(s.label);
    }
    let mut loss = weighted_bce_var(&mut g, &labels, &preds, cfg.delta)?;
    if cfg.l2_lambda > 0.0 {
        if let Some(pen) = l2_penalty(&mut g, &p)? {
            let scaled = g.affine(pen, cfg.l2_lambda, 0.0);
            loss = g.add(loss, scaled)?;
        }
    }
    Ok((g, p, loss))
}

pub fn predict_all(model: &Model, samples: &[WindowedSample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| model.predict(s.inputs())).collect()
}

/// Trains `model` in place. Shuffling and dropout draw from independent
/// streams of a generator seeded with `cfg.seed`.
pub fn fit(
    model: &mut Model,
    samples: &[WindowedSample],
    cfg: &TrainConfig,
    validation: Option<&[WindowedSample]>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    check_samples(model, samples)?;
    if let Some(val) = validation {
        check_samples(model, val)?;
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowedSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut mode = Mode::Train(&mut dropout_rng);
            let (mut g, p, loss) = batch_objective(model, &batch, cfg, &mut mode)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {value} at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            g.backward(loss)?;
            let grads = p.map(&mut |&v| g.grad_tensor(v));
            adam_step(&mut model.params, &grads, &mut adam, cfg)?;
            weighted += value * batch.len() as f64;
        }
        let validation = match validation {
            Some(val) if !val.is_empty() => {
                let preds = predict_all(model, val)?;
                let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
                Some(evaluate(&preds, &labels, DEFAULT_THRESHOLD)?)
            }
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss: weighted / samples.len() as f64,
            validation,
        });
    }
    Ok(history)
}

/// Initializes parameters from `cfg.seed` and trains.
pub fn train(
    model_cfg: ModelConfig,
    time: TimeEmbedConfig,
    unit: TimeUnit,
    samples: &[WindowedSample],
    cfg: &TrainConfig,
    validation: Option<&[WindowedSample]>,
) -> Result<(Model, TrainHistory)> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(model_cfg, time, unit, &mut init_rng)?;
    let history = fit(&mut model, samples, cfg, validation)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests;

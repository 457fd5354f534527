//! Mini-batch training loop with Adam or plain SGD on the MSE loss.

use ndarray::{s, Array3, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Tensor};
use super::layers::Mode;
use super::model::SequenceModel;
use crate::data::SequenceBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once the epoch mean loss reaches this value.
    pub target_train_error: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            target_train_error: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be finite and >= 0".into()));
        }
        if self.target_train_error.is_nan() || self.target_train_error < 0.0 {
            return Err(Error::InvalidParameter("target_train_error must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch.
    pub losses: Vec<f64>,
    pub reached_target: bool,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn check_batch<M: SequenceModel + ?Sized>(model: &M, batch: &SequenceBatch) -> Result<()> {
    let (_, l, f) = batch.inputs.dim();
    let (_, m, fo) = batch.targets.dim();
    if (l, f, m, fo)
        != (
            model.input_len(),
            model.in_features(),
            model.output_len(),
            model.out_features(),
        )
    {
        return Err(Error::shape(
            format!(
                "inputs (_, {}, {}) targets (_, {}, {})",
                model.input_len(),
                model.in_features(),
                model.output_len(),
                model.out_features()
            ),
            format!("inputs (_, {l}, {f}) targets (_, {m}, {fo})"),
        ));
    }
    if batch.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(())
}

fn rows(a: ArrayView3<f64>, idx: &[usize]) -> Tensor {
    let (_, l, f) = a.dim();
    let mut values = Vec::with_capacity(idx.len() * l * f);
    for &i in idx {
        values.extend(a.slice(s![i, .., ..]).iter().copied());
    }
    Tensor::new(vec![idx.len(), l, f], values).expect("gathered shape")
}

/// Trains in place. Deterministic for a fixed seed.
pub fn train<M: SequenceModel + ?Sized>(
    model: &mut M,
    batch: &SequenceBatch,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_batch(model, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut adam = AdamState {
        m: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        v: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        t: 0,
    };
    let mut losses = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let params = model.register_params(&mut g);
            let x = g.constant(rows(batch.inputs.view(), chunk));
            let y = g.constant(rows(batch.targets.view(), chunk));
            let pred = model.forward(&mut g, &params, x, &mut Mode::Train(&mut rng))?;
            let loss = g.mse(pred, y)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, loss: lv });
            }
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = params
                .iter()
                .map(|&p| g.grad(p).map(<[f64]>::to_vec).unwrap_or_default())
                .collect();
            apply_update(model, &grads, cfg, &mut adam)?;
            total += lv * chunk.len() as f64;
            count += chunk.len();
        }
        let mean = total / count as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
        if mean <= cfg.target_train_error {
            return Ok(TrainReport {
                losses,
                reached_target: true,
            });
        }
    }
    Ok(TrainReport {
        losses,
        reached_target: false,
    })
}

fn apply_update<M: SequenceModel + ?Sized>(
    model: &mut M,
    grads: &[Vec<f64>],
    cfg: &TrainConfig,
    adam: &mut AdamState,
) -> Result<()> {
    for (i, gr) in grads.iter().enumerate() {
        if gr.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
    }
    adam.t += 1;
    let lr = cfg.learning_rate;
    let bc1 = 1.0 - BETA1.powi(adam.t);
    let bc2 = 1.0 - BETA2.powi(adam.t);
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        let gr = &grads[i];
        if gr.is_empty() {
            continue;
        }
        let values = p.values_mut();
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, g) in values.iter_mut().zip(gr) {
                    *w -= lr * g;
                }
            }
            Optimizer::Adam => {
                let (m, v) = (&mut adam.m[i], &mut adam.v[i]);
                for k in 0..values.len() {
                    m[k] = BETA1 * m[k] + (1.0 - BETA1) * gr[k];
                    v[k] = BETA2 * v[k] + (1.0 - BETA2) * gr[k] * gr[k];
                    let mh = m[k] / bc1;
                    let vh = v[k] / bc2;
                    values[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
    }
    Ok(())
}

/// Mean squared error of the model over a whole batch.
pub fn evaluate_loss<M: SequenceModel + ?Sized>(model: &M, batch: &SequenceBatch) -> Result<f64> {
    check_batch(model, batch)?;
    let pred: Array3<f64> = super::model::predict(model, batch.inputs.view())?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(batch.targets.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

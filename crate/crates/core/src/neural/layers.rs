//! Layer helpers shared by the model families.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Forward-pass mode. Training mode carries the generator used for
/// stochastic layers.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Adds `N(0, std^2)` noise in training mode; identity otherwise.
pub fn gaussian_noise(g: &mut Graph, x: Var, std: f64, mode: &mut Mode<'_>) -> Result<Var> {
    match mode {
        Mode::Train(rng) if std > 0.0 => {
            let normal = Normal::new(0.0, std).expect("std is positive and finite");
            let shape = g.shape(x).to_vec();
            let n: usize = shape.iter().product();
            let noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut **rng)).collect();
            let c = g.constant(Tensor::new(shape, noise)?);
            g.add(x, c)
        }
        _ => Ok(x),
    }
}

/// Glorot-uniform initialised tensor: `U(±sqrt(6 / (fan_in + fan_out)))`.
pub fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, values).expect("length matches shape")
}

/// `y = x W + b` on a fresh graph.
pub fn dense_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (w, b, x) = (g.constant(w.clone()), g.constant(b.clone()), g.constant(x.clone()));
    let y = g.dense(x, w, b)?;
    Ok(g.value(y).clone())
}

/// Valid cross-correlation of one `(l, F_in)` sequence with kernels
/// `(width, F_in, K)`, giving `(l - width + 1, K)`.
pub fn conv1d_forward(kernels: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let k = kernels.shape()[2];
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let xv = g.constant(Tensor::new(shape, x.values().to_vec())?);
    let kv = g.constant(kernels.clone());
    let bv = g.constant(Tensor::zeros(vec![k]));
    let y = g.conv1d(xv, kv, bv)?;
    let s = g.shape(y).to_vec();
    Tensor::new(s[1..].to_vec(), g.value(y).values().to_vec())
}

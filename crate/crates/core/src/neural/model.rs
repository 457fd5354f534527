//! The two lightweight model families: an undercomplete autoencoder that
//! reconstructs whole input sequences, and a 1D CNN that forecasts the
//! next `m` records.

use ndarray::{Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Tensor, Var};
use super::layers::{gaussian_noise, glorot, Activation, Mode};
use crate::error::{Error, Result};

/// A differentiable sequence-to-sequence model on `(B, l, F_in)` inputs.
pub trait SequenceModel {
    fn input_len(&self) -> usize;
    fn in_features(&self) -> usize;
    /// Output records per window (`m`).
    fn output_len(&self) -> usize;
    fn out_features(&self) -> usize;
    /// Gap between the last input and the first predicted record.
    fn horizon(&self) -> usize;
    /// True when the output reconstructs the input window.
    fn is_autoencoder(&self) -> bool;
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    /// `x (B, l, F_in)` → `(B, m, F_out)`.
    fn forward(&self, g: &mut Graph, params: &[Var], x: Var, mode: &mut Mode<'_>) -> Result<Var>;

    fn register_params(&self, g: &mut Graph) -> Vec<Var> {
        self.params().iter().map(|p| g.param(p.clone())).collect()
    }
}

const PREDICT_CHUNK: usize = 512;

/// Eval-mode forward pass over every window, in chunks.
pub fn predict<M: SequenceModel + ?Sized>(model: &M, inputs: ArrayView3<f64>) -> Result<Array3<f64>> {
    let (b, l, f) = inputs.dim();
    if l != model.input_len() || f != model.in_features() {
        return Err(Error::shape(
            format!("(_, {}, {})", model.input_len(), model.in_features()),
            format!("(_, {l}, {f})"),
        ));
    }
    let (m, fo) = (model.output_len(), model.out_features());
    let mut out = Vec::with_capacity(b * m * fo);
    let flat: Vec<f64> = inputs.iter().copied().collect();
    for start in (0..b).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(b);
        let mut g = Graph::new();
        let params: Vec<Var> = model.params().iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(Tensor::new(
            vec![end - start, l, f],
            flat[start * l * f..end * l * f].to_vec(),
        )?);
        let y = model.forward(&mut g, &params, x, &mut Mode::Eval)?;
        out.extend_from_slice(g.value(y).values());
    }
    Ok(Array3::from_shape_vec((b, m, fo), out).expect("forward output shape"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UaeConfig {
    pub n_features: usize,
    pub seq_len: usize,
    #[serde(default = "default_inflation")]
    pub inflation_factor: usize,
    #[serde(default = "default_code_ratio")]
    pub code_ratio: f64,
    #[serde(default)]
    pub activation: Activation,
    /// Standard deviation of the training-only corruption layer.
    #[serde(default)]
    pub noise_std: f64,
}

fn default_inflation() -> usize {
    3
}

fn default_code_ratio() -> f64 {
    0.5
}

impl UaeConfig {
    pub fn new(n_features: usize, seq_len: usize) -> Self {
        Self {
            n_features,
            seq_len,
            inflation_factor: default_inflation(),
            code_ratio: default_code_ratio(),
            activation: Activation::default(),
            noise_std: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_features * self.seq_len
    }

    pub fn inflated_dim(&self) -> usize {
        self.inflation_factor * self.input_dim()
    }

    pub fn code_dim(&self) -> usize {
        ((self.code_ratio * self.input_dim() as f64).floor() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.seq_len == 0 || self.inflation_factor == 0 {
            return Err(Error::InvalidParameter(
                "autoencoder needs features, sequence length and inflation >= 1".into(),
            ));
        }
        if !(self.code_ratio > 0.0 && self.code_ratio < 1.0) || self.code_dim() >= self.input_dim() {
            return Err(Error::InvalidParameter(format!(
                "code size {} is not smaller than the input size {}",
                self.code_dim(),
                self.input_dim()
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter("noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (d, h, c) = (self.input_dim(), self.inflated_dim(), self.code_dim());
        vec![vec![d, h], vec![h], vec![h, c], vec![c], vec![c, d], vec![d]]
    }
}

/// Undercomplete autoencoder: optional Gaussian corruption, an inflating
/// dense layer, a dense encoder to the code and a linear dense decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct UaeModel {
    cfg: UaeConfig,
    params: Vec<Tensor>,
}

impl UaeModel {
    pub fn new(cfg: UaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, c) = (cfg.input_dim(), cfg.inflated_dim(), cfg.code_dim());
        let params = vec![
            glorot(vec![d, h], d, h, &mut rng),
            Tensor::zeros(vec![h]),
            glorot(vec![h, c], h, c, &mut rng),
            Tensor::zeros(vec![c]),
            glorot(vec![c, d], c, d, &mut rng),
            Tensor::zeros(vec![d]),
        ];
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &UaeConfig {
        &self.cfg
    }

    fn from_parts(cfg: UaeConfig, params: Vec<Tensor>) -> Result<Self> {
        cfg.validate()?;
        check_shapes(&cfg.param_shapes(), &params)?;
        Ok(Self { cfg, params })
    }
}

impl SequenceModel for UaeModel {
    fn input_len(&self) -> usize {
        self.cfg.seq_len
    }
    fn in_features(&self) -> usize {
        self.cfg.n_features
    }
    fn output_len(&self) -> usize {
        self.cfg.seq_len
    }
    fn out_features(&self) -> usize {
        self.cfg.n_features
    }
    fn horizon(&self) -> usize {
        0
    }
    fn is_autoencoder(&self) -> bool {
        true
    }
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let b = g.shape(x)[0];
        let d = self.cfg.input_dim();
        let flat = g.reshape(x, vec![b, d])?;
        let noisy = gaussian_noise(g, flat, self.cfg.noise_std, mode)?;
        let h = g.dense(noisy, p[0], p[1])?;
        let h = self.cfg.activation.apply(g, h);
        let code = g.dense(h, p[2], p[3])?;
        let code = self.cfg.activation.apply(g, code);
        let out = g.dense(code, p[4], p[5])?;
        g.reshape(out, vec![b, self.cfg.seq_len, self.cfg.n_features])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    pub in_features: usize,
    pub out_features: usize,
    #[serde(default = "default_cnn_seq")]
    pub seq_len: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_kernel")]
    pub kernel_width: usize,
    /// Max-pool after every `pool_every`-th convolution when the remaining
    /// layers still fit; 0 disables pooling.
    #[serde(default = "default_pool_every")]
    pub pool_every: usize,
    #[serde(default = "default_out_len")]
    pub out_len: usize,
    #[serde(default)]
    pub horizon: usize,
}

fn default_cnn_seq() -> usize {
    18
}
fn default_depth() -> usize {
    8
}
fn default_filters() -> usize {
    32
}
fn default_kernel() -> usize {
    3
}
fn default_pool_every() -> usize {
    2
}
fn default_out_len() -> usize {
    1
}

impl CnnConfig {
    pub fn new(n_features: usize) -> Self {
        Self {
            in_features: n_features,
            out_features: n_features,
            seq_len: default_cnn_seq(),
            depth: default_depth(),
            filters: default_filters(),
            kernel_width: default_kernel(),
            pool_every: default_pool_every(),
            out_len: default_out_len(),
            horizon: 0,
        }
    }

    /// Per-layer pooling decisions and the final sequence length.
    pub fn plan(&self) -> Result<(Vec<bool>, usize)> {
        if self.depth == 0 || self.filters == 0 || self.kernel_width == 0 || self.out_len == 0 {
            return Err(Error::InvalidParameter(
                "CNN depth, filters, kernel width and output length must be >= 1".into(),
            ));
        }
        if self.in_features == 0 || self.out_features == 0 {
            return Err(Error::InvalidParameter("CNN needs at least one feature".into()));
        }
        let shrink = self.kernel_width - 1;
        let mut len = self.seq_len;
        let mut pools = Vec::with_capacity(self.depth);
        for layer in 0..self.depth {
            if len < self.kernel_width {
                return Err(Error::InvalidParameter(format!(
                    "receptive field of {} layers of width {} exceeds sequence length {}",
                    self.depth, self.kernel_width, self.seq_len
                )));
            }
            len -= shrink;
            let remaining = self.depth - layer - 1;
            let wants = self.pool_every > 0 && (layer + 1) % self.pool_every == 0;
            let fits = len / 2 >= 1 + remaining * shrink;
            let pool = wants && fits && len >= 2;
            if pool {
                len /= 2;
            }
            pools.push(pool);
        }
        Ok((pools, len))
    }

    fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let (_, final_len) = self.plan()?;
        let mut shapes = Vec::new();
        let mut cin = self.in_features;
        for _ in 0..self.depth {
            shapes.push(vec![self.kernel_width, cin, self.filters]);
            shapes.push(vec![self.filters]);
            cin = self.filters;
        }
        let flat = final_len * self.filters;
        let out = self.out_len * self.out_features;
        shapes.push(vec![flat, out]);
        shapes.push(vec![out]);
        Ok(shapes)
    }
}

/// Stack of valid ReLU convolutions with optional pooling and a dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    cfg: CnnConfig,
    pools: Vec<bool>,
    final_len: usize,
    params: Vec<Tensor>,
}

impl CnnModel {
    pub fn new(cfg: CnnConfig, seed: u64) -> Result<Self> {
        let (pools, final_len) = cfg.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = cfg
            .param_shapes()?
            .into_iter()
            .map(|s| match s.len() {
                3 => glorot(s.clone(), s[0] * s[1], s[0] * s[2], &mut rng),
                2 => glorot(s.clone(), s[0], s[1], &mut rng),
                _ => Tensor::zeros(s),
            })
            .collect();
        Ok(Self {
            cfg,
            pools,
            final_len,
            params,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    /// Records that influence one output.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for &pool in &self.pools {
            rf += (self.cfg.kernel_width - 1) * jump;
            if pool {
                rf += jump;
                jump *= 2;
            }
        }
        rf + (self.final_len - 1) * jump
    }

    fn from_parts(cfg: CnnConfig, params: Vec<Tensor>) -> Result<Self> {
        let (pools, final_len) = cfg.plan()?;
        check_shapes(&cfg.param_shapes()?, &params)?;
        Ok(Self {
            cfg,
            pools,
            final_len,
            params,
        })
    }
}

impl SequenceModel for CnnModel {
    fn input_len(&self) -> usize {
        self.cfg.seq_len
    }
    fn in_features(&self) -> usize {
        self.cfg.in_features
    }
    fn output_len(&self) -> usize {
        self.cfg.out_len
    }
    fn out_features(&self) -> usize {
        self.cfg.out_features
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn is_autoencoder(&self) -> bool {
        false
    }
    fn params(&self) -> &[Tensor] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var, _mode: &mut Mode<'_>) -> Result<Var> {
        let b = g.shape(x)[0];
        let mut h = x;
        for (layer, &pool) in self.pools.iter().enumerate() {
            h = g.conv1d(h, p[2 * layer], p[2 * layer + 1])?;
            h = g.relu(h);
            if pool {
                h = g.max_pool2(h)?;
            }
        }
        let flat = g.reshape(h, vec![b, self.final_len * self.cfg.filters])?;
        let n = p.len();
        let out = g.dense(flat, p[n - 2], p[n - 1])?;
        g.reshape(out, vec![b, self.cfg.out_len, self.cfg.out_features])
    }
}

fn check_shapes(expected: &[Vec<usize>], params: &[Tensor]) -> Result<()> {
    if expected.len() != params.len() {
        return Err(Error::shape(
            format!("{} parameter tensors", expected.len()),
            params.len(),
        ));
    }
    for (e, p) in expected.iter().zip(params) {
        if e.as_slice() != p.shape() {
            return Err(Error::shape(format!("{e:?}"), format!("{:?}", p.shape())));
        }
        if p.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter value".into()));
        }
    }
    Ok(())
}

/// Either trained model family.
#[derive(Debug, Clone, PartialEq)]
pub enum NeuralModel {
    Uae(UaeModel),
    Cnn(CnnModel),
}

impl NeuralModel {
    pub fn as_model(&self) -> &dyn SequenceModel {
        match self {
            NeuralModel::Uae(m) => m,
            NeuralModel::Cnn(m) => m,
        }
    }

    pub fn as_model_mut(&mut self) -> &mut dyn SequenceModel {
        match self {
            NeuralModel::Uae(m) => m,
            NeuralModel::Cnn(m) => m,
        }
    }

    pub fn to_file(&self) -> ModelFile {
        let architecture = match self {
            NeuralModel::Uae(m) => Architecture::Uae(m.cfg.clone()),
            NeuralModel::Cnn(m) => Architecture::Cnn(m.cfg.clone()),
        };
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            architecture,
            params: self
                .as_model()
                .params()
                .iter()
                .map(|p| ParamBuffer {
                    shape: p.shape().to_vec(),
                    values: p.values().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds a model, re-validating every shape invariant.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        let params = file
            .params
            .into_iter()
            .map(|p| Tensor::new(p.shape, p.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(match file.architecture {
            Architecture::Uae(cfg) => NeuralModel::Uae(UaeModel::from_parts(cfg, params)?),
            Architecture::Cnn(cfg) => NeuralModel::Cnn(CnnModel::from_parts(cfg, params)?),
        })
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Architecture {
    Uae(UaeConfig),
    Cnn(CnnConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBuffer {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned container: architecture descriptor plus flat parameter buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub architecture: Architecture,
    pub params: Vec<ParamBuffer>,
}

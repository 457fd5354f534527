//! White-box evasion search against the neural detectors.
//!
//! [`WrapperModel`] composes enrichment, windowing, the model and the
//! residual normalization into one differentiable graph over the full
//! input trace, so the gradient of the detection statistic reaches every
//! input element. [`find_adversarial`] descends on that statistic under a
//! per-element noise budget and the physical constraints of each feature.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, FeatureMeta, SequenceBatch, TimeSeriesDataset};
use crate::detector::{neural_batch, DetectorModel, FittedDetector};
use crate::error::{Error, Result};
use crate::neural::{Graph, Mode, SequenceModel, Tensor, Var};
use crate::scoring::TrainStats;

/// Scalar the search descends on. Both report the true maximum; they
/// differ only in how the gradient is spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Subgradient of the hard maximum.
    Max,
    /// Gradient of `(1/beta) ln Σ exp(beta r)`.
    SmoothMax { beta: f64 },
}

impl Default for Objective {
    fn default() -> Self {
        Objective::SmoothMax { beta: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub tau: f64,
    /// Per-element noise bound in normalized units; `None` is unbounded.
    pub epsilon: Option<f64>,
    pub adv_lr: f64,
    pub max_iterations: usize,
    pub adaptive_lr: bool,
    pub objective: Objective,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            epsilon: None,
            adv_lr: 0.1,
            max_iterations: 500,
            adaptive_lr: true,
            objective: Objective::default(),
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {e}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.adv_lr >= 0.0 && self.adv_lr.is_finite()) {
            return Err(Error::InvalidParameter("adv_lr must be finite and >= 0".into()));
        }
        if let Objective::SmoothMax { beta } = self.objective {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidParameter("smooth-max beta must be positive".into()));
            }
        }
        Ok(())
    }

    fn bound(&self) -> f64 {
        self.epsilon.unwrap_or(f64::INFINITY)
    }
}

/// Physical constraints φ: a valid range per feature and the binary set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub ranges: Vec<(f64, f64)>,
    pub binary: Vec<bool>,
}

impl Constraints {
    /// From the metadata of a dataset in the units the search runs in.
    pub fn from_meta(meta: &[FeatureMeta]) -> Self {
        Self {
            ranges: meta.iter().map(|m| m.valid_range).collect(),
            binary: meta.iter().map(|m| m.kind == FeatureKind::Binary).collect(),
        }
    }

    pub fn unconstrained(n_features: usize) -> Self {
        Self {
            ranges: vec![(f64::NEG_INFINITY, f64::INFINITY); n_features],
            binary: vec![false; n_features],
        }
    }

    fn check(&self, f: usize) -> Result<()> {
        if self.ranges.len() != f || self.binary.len() != f {
            return Err(Error::shape(format!("constraints for {f} features"), self.ranges.len()));
        }
        Ok(())
    }
}

/// Clips continuous features to their range and snaps binary ones to the
/// nearest of {0, 1}.
pub fn enforce_constraints(x: &mut Array2<f64>, phi: &Constraints) -> Result<()> {
    phi.check(x.ncols())?;
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        if phi.binary[j] {
            col.mapv_inplace(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        } else {
            let (lo, hi) = phi.ranges[j];
            col.mapv_inplace(|v| v.clamp(lo, hi));
        }
    }
    Ok(())
}

/// `x_att + noise` under φ, kept within `eps` of `x_att`. A binary snap
/// that would leave the budget falls back to the attacked value.
fn project(x_att: ArrayView2<f64>, noise: &Array2<f64>, phi: &Constraints, eps: f64) -> Result<Array2<f64>> {
    let mut x = &x_att + noise;
    enforce_constraints(&mut x, phi)?;
    Zip::indexed(&mut x).and(x_att).for_each(|(_, j), v, &a| {
        if phi.binary[j] {
            if (*v - a).abs() > eps {
                *v = a;
            }
        } else {
            *v = v.clamp(a - eps, a + eps);
        }
    });
    Ok(x)
}

fn clip(noise: &mut Array2<f64>, eps: f64) {
    if eps.is_finite() {
        noise.mapv_inplace(|v| v.clamp(-eps, eps));
    }
}

/// Detection statistic and its gradient for one trace.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Maximum normalized residual, exactly as the scoring pipeline computes it.
    pub residual: f64,
    /// Value of the descent objective.
    pub objective: f64,
    /// Gradient of the objective with respect to every input element.
    pub gradient: Array2<f64>,
}

/// A neural detector wrapped for full-input gradient propagation.
pub struct WrapperModel<'a> {
    model: &'a dyn SequenceModel,
    enrichment: bool,
    stats: &'a TrainStats,
    n_features: usize,
}

/// Wraps a fitted neural detector; PCA detectors are rejected.
pub fn build_wrapper(det: &FittedDetector) -> Result<WrapperModel<'_>> {
    match &det.model {
        DetectorModel::Neural { model, enrichment } => {
            let m = model.as_model();
            let n_features = det.stats.n_features();
            if m.out_features() < n_features {
                return Err(Error::shape(format!("at least {n_features} outputs"), m.out_features()));
            }
            Ok(WrapperModel {
                model: m,
                enrichment: *enrichment,
                stats: &det.stats,
                n_features,
            })
        }
        _ => Err(Error::Untrained),
    }
}

impl WrapperModel<'_> {
    pub fn input_len(&self) -> usize {
        self.model.input_len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Maximum normalized residual of `x`.
    pub fn residual(&self, x: ArrayView2<f64>) -> Result<f64> {
        Ok(self.run(x, Objective::Max, false)?.residual)
    }

    pub fn evaluate(&self, x: ArrayView2<f64>, objective: Objective) -> Result<Evaluation> {
        self.run(x, objective, true)
    }

    fn windows(&self, x: ArrayView2<f64>) -> Result<SequenceBatch> {
        // same windowing as scoring, built on a zero matrix for its indices
        let probe = Array2::zeros((x.nrows(), self.n_features));
        neural_batch(self.model, probe.view(), self.enrichment, 1)
    }

    fn run(&self, x: ArrayView2<f64>, objective: Objective, with_grad: bool) -> Result<Evaluation> {
        let (t, f) = x.dim();
        if f != self.n_features {
            return Err(Error::shape(format!("{} features", self.n_features), f));
        }
        let batch = self.windows(x)?;
        let (l, m) = (self.model.input_len(), self.model.output_len());
        let b = batch.len();
        let mut covered = vec![false; t];
        let mut targets = Vec::with_capacity(b * m);
        for i in 0..b {
            let s = batch.target_start(i);
            for k in 0..m {
                targets.push(s + k);
                covered[s + k] = true;
            }
        }
        let cov_rows: Vec<usize> = (0..t).filter(|&r| covered[r]).collect();
        if cov_rows.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "trace of {t} records is shorter than one window"
            )));
        }

        let mut g = Graph::new();
        let params: Vec<Var> = self.model.params().iter().map(|p| g.constant(p.clone())).collect();
        let xv = g.param(Tensor::from_array(&x.to_owned()));
        let input = if self.enrichment {
            let d = g.diff_rows(xv)?;
            g.concat_cols(xv, d)?
        } else {
            xv
        };
        let fin = g.shape(input)[1];
        let rows: Vec<usize> = batch.starts.iter().flat_map(|&s| s..s + l).collect();
        let win = g.gather_rows(input, rows)?;
        let win = g.reshape(win, vec![b, l, fin])?;
        let y = self.model.forward(&mut g, &params, win, &mut Mode::Eval)?;
        let fo = g.shape(y)[2];
        let y = g.reshape(y, vec![b * m, fo])?;
        let y = g.scatter_mean(y, targets, t)?;
        let y_hat = g.slice_cols(y, 0, f)?;
        let yc = g.gather_rows(y_hat, cov_rows.clone())?;
        let xc = g.gather_rows(xv, cov_rows.clone())?;
        let diff = g.sub(xc, yc)?;
        let raw = g.abs(diff);

        let (center, scale): (Vec<f64>, Vec<f64>) = match self.stats {
            TrainStats::MaxNorm { max } => (vec![0.0; f], max.clone()),
            TrainStats::Zscore { mean, std } => (mean.clone(), std.clone()),
        };
        let inv: Vec<f64> = scale.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
        let mut norm = g.mul_cols(raw, &inv)?;
        if center.iter().any(|&c| c != 0.0) {
            let n = cov_rows.len();
            let offs: Vec<f64> = (0..n * f)
                .map(|i| {
                    let j = i % f;
                    if scale[j] > 0.0 {
                        -center[j] / scale[j]
                    } else {
                        0.0
                    }
                })
                .collect();
            let c = g.constant(Tensor::new(vec![n, f], offs)?);
            norm = g.add(norm, c)?;
        }

        // residual exactly as the scoring pipeline reports it
        let raw_vals = g.value(raw).values().to_vec();
        let mut true_max = g
            .value(norm)
            .values()
            .iter()
            .enumerate()
            .filter(|(i, _)| scale[i % f] > 0.0)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        for (i, &r) in raw_vals.iter().enumerate() {
            let j = i % f;
            if scale[j] <= 0.0 {
                let v = if r == center[j] {
                    0.0
                } else if r > center[j] {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                };
                true_max = true_max.max(v);
            }
        }
        if cov_rows.len() < t {
            true_max = true_max.max(0.0);
        }

        let out = match objective {
            Objective::Max => g.max(norm)?,
            Objective::SmoothMax { beta } => g.logsumexp(norm, beta)?,
        };
        let obj_value = g.value(out).item();
        let gradient = if with_grad {
            g.backward(out)?;
            let gv = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t * f]);
            Array2::from_shape_vec((t, f), gv).expect("gradient shape")
        } else {
            Array2::zeros((t, f))
        };
        Ok(Evaluation {
            residual: true_max,
            objective: obj_value,
            gradient,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Evaded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub x_adv: Array2<f64>,
    /// `x_adv - x_att`.
    pub noise: Array2<f64>,
    /// Maximum normalized residual before the search and after each iteration.
    pub residual_trace: Vec<f64>,
    /// Largest `|noise|` at the same points.
    pub noise_trace: Vec<f64>,
    pub verdict: Verdict,
    pub iterations: usize,
    /// Set by [`intent_check`]; true when no intent was checked.
    pub physical_intent_preserved: bool,
}

impl AdversarialResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_trace.last().expect("trace holds the initial residual")
    }

    /// Text summary: verdict, iterations, final residual and intent flag.
    pub fn summary_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "verdict": self.verdict,
            "iterations": self.iterations,
            "initial_residual": self.residual_trace[0],
            "final_residual": self.final_residual(),
            "max_abs_noise": self.noise.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            "physical_intent_preserved": self.physical_intent_preserved,
            "residual_trace": self.residual_trace,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// The perturbed trace as CSV, with the timestamps and names of `like`.
    pub fn write_trace_csv<W: Write>(&self, like: &TimeSeriesDataset, writer: W) -> Result<()> {
        like.with_features(self.x_adv.clone())?.write_csv(writer)
    }
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Gradient descent on the detection statistic of `x_att`.
///
/// Each iteration moves the noise by `adv_lr * max|grad| * grad`, clips it
/// to ε and re-applies φ. With `adaptive_lr` a step that raises the
/// objective is undone and the rate halved; three accepted decreases in a
/// row restore the base rate.
pub fn find_adversarial(
    wrapper: &WrapperModel<'_>,
    x_att: ArrayView2<f64>,
    phi: &Constraints,
    cfg: &AdversarialConfig,
) -> Result<AdversarialResult> {
    cfg.validate()?;
    phi.check(x_att.ncols())?;
    let eps = cfg.bound();
    let mut noise = Array2::zeros(x_att.dim());
    let mut x = project(x_att, &noise, phi, eps)?;
    let mut ev = wrapper.evaluate(x.view(), cfg.objective)?;
    let mut residual_trace = vec![ev.residual];
    let mut noise_trace = vec![max_abs(&(&x - &x_att))];
    let mut lr = cfg.adv_lr;
    let mut streak = 0;
    let mut iterations = 0;
    while ev.residual >= cfg.tau && iterations < cfg.max_iterations {
        if ev.gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(iterations));
        }
        let step = lr * max_abs(&ev.gradient);
        let mut candidate = &noise - &(&ev.gradient * step);
        clip(&mut candidate, eps);
        let x_c = project(x_att, &candidate, phi, eps)?;
        let ev_c = wrapper.evaluate(x_c.view(), cfg.objective)?;
        iterations += 1;
        if cfg.adaptive_lr && !(ev_c.objective <= ev.objective) {
            lr /= 2.0;
            streak = 0;
        } else {
            if cfg.adaptive_lr {
                streak += 1;
                if streak >= 3 {
                    lr = cfg.adv_lr;
                    streak = 0;
                }
            }
            noise = candidate;
            x = x_c;
            ev = ev_c;
        }
        residual_trace.push(ev.residual);
        noise_trace.push(max_abs(&(&x - &x_att)));
    }
    let verdict = if ev.residual < cfg.tau {
        Verdict::Evaded
    } else {
        Verdict::Failed
    };
    Ok(AdversarialResult {
        noise: &x - &x_att,
        x_adv: x,
        residual_trace,
        noise_trace,
        verdict,
        iterations,
        physical_intent_preserved: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtLeast,
    AtMost,
}

/// The attacker's physical objective: `feature` compared with `value` on
/// every record of `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub feature: usize,
    pub start: usize,
    pub end: usize,
    pub comparison: Comparison,
    pub value: f64,
}

/// True when `x_adv` still satisfies the intent.
pub fn intent_check(x_att: ArrayView2<f64>, x_adv: ArrayView2<f64>, intent: &Intent) -> Result<bool> {
    if x_att.dim() != x_adv.dim() {
        return Err(Error::shape(format!("{:?}", x_att.dim()), format!("{:?}", x_adv.dim())));
    }
    if intent.feature >= x_adv.ncols() || intent.start > intent.end || intent.end > x_adv.nrows() {
        return Err(Error::InvalidParameter("intent outside the trace".into()));
    }
    let col = x_adv.column(intent.feature);
    Ok((intent.start..intent.end).all(|r| match intent.comparison {
        Comparison::AtLeast => col[r] >= intent.value,
        Comparison::AtMost => col[r] <= intent.value,
    }))
}

//! Residuals, residual normalization, windowed alerting, threshold tuning
//! and alert localization.

use std::io::Write;

use ndarray::{Array2, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    MaxNorm,
    Zscore,
}

/// Per-feature statistics of training residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum TrainStats {
    MaxNorm { max: Vec<f64> },
    Zscore { mean: Vec<f64>, std: Vec<f64> },
}

impl TrainStats {
    pub fn scheme(&self) -> Scheme {
        match self {
            TrainStats::MaxNorm { .. } => Scheme::MaxNorm,
            TrainStats::Zscore { .. } => Scheme::Zscore,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainStats::MaxNorm { max } => max.len(),
            TrainStats::Zscore { mean, .. } => mean.len(),
        }
    }
}

/// Raw and normalized residuals of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    /// `|y - ŷ|`; zero on records no prediction covers.
    pub raw: Array2<f64>,
    pub normalized: Array2<f64>,
    pub stats: TrainStats,
    /// Records that received at least one prediction.
    pub covered: Vec<bool>,
    /// Features whose training statistic was zero but whose raw residual
    /// was not; their normalized value is `+inf`.
    pub flagged: Vec<bool>,
}

/// Averages overlapping window predictions onto the record axis.
///
/// `pred` is `(N, m, F)`; item `i` predicts records `target_starts[i]..+m`.
/// Returns the per-record mean and a coverage mask.
pub fn overlap_average(pred: ArrayView3<f64>, target_starts: &[usize], t: usize) -> Result<(Array2<f64>, Vec<bool>)> {
    let (n, m, f) = pred.dim();
    if target_starts.len() != n {
        return Err(Error::shape(format!("{n} target starts"), target_starts.len()));
    }
    let mut sum = Array2::zeros((t, f));
    let mut count = vec![0usize; t];
    for (i, &s) in target_starts.iter().enumerate() {
        if s + m > t {
            return Err(Error::shape(format!("targets within {t} records"), s + m));
        }
        for k in 0..m {
            count[s + k] += 1;
            for j in 0..f {
                sum[[s + k, j]] += pred[[i, k, j]];
            }
        }
    }
    for (r, &c) in count.iter().enumerate() {
        if c > 1 {
            for j in 0..f {
                sum[[r, j]] /= c as f64;
            }
        }
    }
    Ok((sum, count.into_iter().map(|c| c > 0).collect()))
}

/// Elementwise `|y - ŷ|`.
pub fn residuals(y: ArrayView2<f64>, y_hat: ArrayView2<f64>) -> Result<Array2<f64>> {
    if y.dim() != y_hat.dim() {
        return Err(Error::shape(format!("{:?}", y.dim()), format!("{:?}", y_hat.dim())));
    }
    Ok((&y - &y_hat).mapv(f64::abs))
}

/// Fits normalization statistics on training residuals, restricted to
/// covered records when a mask is given.
pub fn fit_stats(raw: ArrayView2<f64>, scheme: Scheme, covered: Option<&[bool]>) -> Result<TrainStats> {
    let rows: Vec<usize> = (0..raw.nrows()).filter(|&r| covered.is_none_or(|c| c[r])).collect();
    if rows.is_empty() {
        return Err(Error::EmptySample);
    }
    let f = raw.ncols();
    Ok(match scheme {
        Scheme::MaxNorm => TrainStats::MaxNorm {
            max: (0..f)
                .map(|j| rows.iter().map(|&r| raw[[r, j]]).fold(0.0, f64::max))
                .collect(),
        },
        Scheme::Zscore => {
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..f)
                .map(|j| rows.iter().map(|&r| raw[[r, j]]).sum::<f64>() / n)
                .collect();
            let std = (0..f)
                .map(|j| (rows.iter().map(|&r| (raw[[r, j]] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
                .collect();
            TrainStats::Zscore { mean, std }
        }
    })
}

/// Normalizes raw residuals. A zero statistic maps zero residuals to 0 and
/// anything else to `+inf`; such features are returned as flagged.
pub fn normalize_residuals(raw: ArrayView2<f64>, stats: &TrainStats) -> Result<(Array2<f64>, Vec<bool>)> {
    let f = raw.ncols();
    if stats.n_features() != f {
        return Err(Error::shape(format!("{} feature statistics", f), stats.n_features()));
    }
    let mut out = raw.to_owned();
    let mut flagged = vec![false; f];
    for j in 0..f {
        let (center, scale) = match stats {
            TrainStats::MaxNorm { max } => (0.0, max[j]),
            TrainStats::Zscore { mean, std } => (mean[j], std[j]),
        };
        for v in out.column_mut(j) {
            if scale > 0.0 {
                *v = (*v - center) / scale;
            } else if *v == center {
                *v = 0.0;
            } else {
                *v = if *v > center { f64::INFINITY } else { f64::NEG_INFINITY };
                flagged[j] = true;
            }
        }
    }
    Ok((out, flagged))
}

impl ResidualSeries {
    /// Residuals of `y_hat` against `y`, normalized by `stats`.
    pub fn new(y: ArrayView2<f64>, y_hat: ArrayView2<f64>, covered: Vec<bool>, stats: TrainStats) -> Result<Self> {
        let mut raw = residuals(y, y_hat)?;
        if covered.len() != raw.nrows() {
            return Err(Error::shape(format!("{} coverage flags", raw.nrows()), covered.len()));
        }
        for (r, &c) in covered.iter().enumerate() {
            if !c {
                raw.row_mut(r).fill(0.0);
            }
        }
        let (mut normalized, flagged) = normalize_residuals(raw.view(), &stats)?;
        for (r, &c) in covered.iter().enumerate() {
            if !c {
                normalized.row_mut(r).fill(0.0);
            }
        }
        Ok(Self {
            raw,
            normalized,
            stats,
            covered,
            flagged,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub tau: f64,
    pub window: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertSeries {
    pub alerts: Vec<bool>,
    /// `R_t[f] > τ`.
    pub per_feature: Array2<bool>,
    pub window: usize,
}

fn row_max(normalized: ArrayView2<f64>) -> Vec<f64> {
    normalized
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Marks index `i` when every row maximum in `(i - w, i]` exceeds `tau`.
fn sustained(max: &[f64], tau: f64, w: usize) -> Vec<bool> {
    let mut run = 0usize;
    max.iter()
        .map(|&m| {
            run = if m > tau { run + 1 } else { 0 };
            run >= w
        })
        .collect()
}

/// Alerts once the per-record residual maximum has exceeded `tau` for `w`
/// consecutive records, so the first `w - 1` indices never alert.
pub fn alert(normalized: ArrayView2<f64>, cfg: &DetectorConfig) -> Result<AlertSeries> {
    cfg.validate()?;
    let alerts = sustained(&row_max(normalized), cfg.tau, cfg.window);
    Ok(AlertSeries {
        alerts,
        per_feature: normalized.mapv(|v| v > cfg.tau),
        window: cfg.window,
    })
}

/// Maximal runs of consecutive `true` values as inclusive index pairs.
pub fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

/// Sorted, deduplicated grid with index-proportional weights `(j+1)/n`.
pub fn grid_weights<T: PartialOrd + Copy>(grid: &[T]) -> Vec<(T, f64)> {
    let mut g: Vec<T> = grid.to_vec();
    g.sort_by(|a, b| a.partial_cmp(b).expect("grid values are comparable"));
    g.dedup_by(|a, b| a == b);
    let n = g.len() as f64;
    g.into_iter()
        .enumerate()
        .map(|(j, v)| (v, (j + 1) as f64 / n))
        .collect()
}

/// Outcome of evaluating one grid pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau: f64,
    pub window: usize,
    pub weight: f64,
    pub false_alarms: usize,
}

/// Every grid pair with its weight and false-alarm count on attack-free data.
pub fn evaluate_grid(normalized: ArrayView2<f64>, tau_grid: &[f64], w_grid: &[usize]) -> Result<Vec<GridPoint>> {
    if tau_grid.is_empty() || w_grid.is_empty() {
        return Err(Error::InvalidParameter("tuning grids must be non-empty".into()));
    }
    if tau_grid.iter().any(|t| !t.is_finite()) || w_grid.contains(&0) {
        return Err(Error::InvalidParameter(
            "tau grid must be finite and window grid >= 1".into(),
        ));
    }
    let max = row_max(normalized);
    let taus = grid_weights(tau_grid);
    let ws = grid_weights(w_grid);
    let mut out = Vec::with_capacity(taus.len() * ws.len());
    for &(w, ww) in &ws {
        for &(tau, wt) in &taus {
            out.push(GridPoint {
                tau,
                window: w,
                weight: wt * ww,
                false_alarms: runs(&sustained(&max, tau, w)).len(),
            });
        }
    }
    Ok(out)
}

/// Picks the lowest-weight `(τ, w)` whose false-alarm runs on attack-free
/// validation residuals do not exceed `fp_max`. Ties go to smaller `w`,
/// then smaller `τ`.
pub fn tune(
    normalized: ArrayView2<f64>,
    tau_grid: &[f64],
    w_grid: &[usize],
    fp_max: usize,
    scheme: Scheme,
) -> Result<DetectorConfig> {
    let grid = evaluate_grid(normalized, tau_grid, w_grid)?;
    let best = grid.iter().filter(|p| p.false_alarms <= fp_max).min_by(|a, b| {
        a.weight
            .total_cmp(&b.weight)
            .then(a.window.cmp(&b.window))
            .then(a.tau.total_cmp(&b.tau))
    });
    match best {
        Some(p) => Ok(DetectorConfig {
            tau: p.tau,
            window: p.window,
            scheme,
        }),
        None => Err(Error::InfeasibleTuning {
            fp_max,
            min_false_alarms: grid.iter().map(|p| p.false_alarms).min().unwrap_or(0),
        }),
    }
}

/// One alert run with the features implicated in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub start: usize,
    pub end: usize,
    pub start_ts: f64,
    pub end_ts: f64,
    /// Feature names with their peak normalized residual, highest first.
    pub features: Vec<(String, f64)>,
    pub peak_residual: f64,
}

/// Lists, per alert run, every feature that exceeded the threshold within
/// the run or the `w - 1` records leading into it. This marks the attack
/// area; it does not establish which feature was manipulated.
pub fn localize(
    alerts: &AlertSeries,
    normalized: ArrayView2<f64>,
    names: &[String],
    timestamps: &[f64],
) -> Result<Vec<AlertRecord>> {
    let (t, f) = normalized.dim();
    if alerts.per_feature.dim() != (t, f) || names.len() != f || timestamps.len() != t {
        return Err(Error::shape(
            format!("{t} records x {f} features"),
            format!(
                "{:?} flags, {} names, {} timestamps",
                alerts.per_feature.dim(),
                names.len(),
                timestamps.len()
            ),
        ));
    }
    let mut out = Vec::new();
    for (s, e) in runs(&alerts.alerts) {
        let from = (s + 1).saturating_sub(alerts.window);
        let mut feats: Vec<(String, f64)> = (0..f)
            .filter(|&j| (from..=e).any(|r| alerts.per_feature[[r, j]]))
            .map(|j| {
                let peak = (from..=e).map(|r| normalized[[r, j]]).fold(f64::NEG_INFINITY, f64::max);
                (names[j].clone(), peak)
            })
            .collect();
        feats.sort_by(|a, b| b.1.total_cmp(&a.1));
        let peak_residual = feats.first().map_or(0.0, |x| x.1);
        out.push(AlertRecord {
            start: s,
            end: e,
            start_ts: timestamps[s],
            end_ts: timestamps[e],
            features: feats,
            peak_residual,
        });
    }
    Ok(out)
}

/// Writes `start_ts,end_ts,features,peak_residual`, listing at most `top_k`
/// features joined by `;`.
pub fn write_alerts_csv<W: Write>(records: &[AlertRecord], top_k: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start_ts", "end_ts", "features", "peak_residual"])?;
    for r in records {
        let feats: Vec<&str> = r.features.iter().take(top_k).map(|(n, _)| n.as_str()).collect();
        w.write_record([
            r.start_ts.to_string(),
            r.end_ts.to_string(),
            feats.join(";"),
            r.peak_residual.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("alerts", e))?;
    Ok(())
}

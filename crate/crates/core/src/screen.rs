//! Feature screening with the classical two-sample K-S statistic and the
//! area-between-ECDFs variant (K-S*).
//!
//! The maximum CDF gap saturates as soon as two distributions are merely
//! offset; the area stays proportional to the offset. Features whose
//! area statistic exceeds a threshold are unstable between the compared
//! periods and are dropped before modeling.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{normalize, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Default drop threshold on (0,1)-normalized features.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Empirical CDF with `F(x) = #{X_i < x} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    support: Vec<f64>,
    /// `steps[i]` = fraction of samples `<= support[i]`; the last entry is 1.
    steps: Vec<f64>,
    n: usize,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("ECDF sample must be finite".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut support = Vec::new();
        let mut steps = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if i + 1 < n && sorted[i + 1] == v {
                continue;
            }
            support.push(v);
            steps.push((i + 1) as f64 / n as f64);
        }
        Ok(Self { support, steps, n })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    /// Fraction of samples strictly below `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.support.partition_point(|&v| v < x);
        if idx == 0 {
            0.0
        } else {
            self.steps[idx - 1]
        }
    }

    /// Fraction of samples at or below `x`: the constant value of `F` on
    /// the open interval right of `x` up to the next support point.
    fn eval_right(&self, x: f64) -> f64 {
        let idx = self.support.partition_point(|&v| v <= x);
        if idx == 0 {
            0.0
        } else {
            self.steps[idx - 1]
        }
    }

    fn min(&self) -> f64 {
        self.support[0]
    }

    fn max(&self) -> f64 {
        *self.support.last().unwrap()
    }
}

pub fn ecdf(sample: &[f64]) -> Result<Ecdf> {
    Ecdf::new(sample)
}

fn merged_points(a: &Ecdf, b: &Ecdf) -> Vec<f64> {
    let mut pts: Vec<f64> = a.support.iter().chain(&b.support).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Largest absolute gap between the two ECDFs.
pub fn ks_stat(a: &Ecdf, b: &Ecdf) -> f64 {
    merged_points(a, b)
        .into_iter()
        .map(|p| (a.eval_right(p) - b.eval_right(p)).abs())
        .fold(0.0, f64::max)
}

/// Exact area `∫ |F_a - F_b| dx` over `domain`, integrated piecewise over
/// the merged step partition.
pub fn ks_star(a: &Ecdf, b: &Ecdf, domain: (f64, f64)) -> Result<f64> {
    let (lo, hi) = domain;
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "integration domain [{lo}, {hi}] has no width"
        )));
    }
    let mut pts = vec![lo];
    pts.extend(merged_points(a, b).into_iter().filter(|&p| p > lo && p < hi));
    pts.push(hi);
    Ok(pts
        .windows(2)
        .map(|w| (w[1] - w[0]) * (a.eval_right(w[0]) - b.eval_right(w[0])).abs())
        .sum())
}

/// Smallest interval covering both supports.
pub fn joint_domain(a: &Ecdf, b: &Ecdf) -> (f64, f64) {
    (a.min().min(b.min()), a.max().max(b.max()))
}

/// K-S* over the joint support; zero when both samples are the same atom.
fn ks_star_auto(a: &Ecdf, b: &Ecdf, base: (f64, f64)) -> f64 {
    let (lo, hi) = joint_domain(a, b);
    let domain = (lo.min(base.0), hi.max(base.1));
    ks_star(a, b, domain).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScreenMode {
    TrainVsTest,
    SplitHalf,
    /// Re-screen a sliding window of the newest `window` test records
    /// against the training distribution every `every` records.
    Periodic {
        every: usize,
        window: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScreen {
    pub feature: String,
    pub ks: f64,
    pub ks_star: f64,
    pub verdict: Verdict,
    /// Constant in the reference data; always dropped.
    pub degenerate: bool,
}

/// One periodic re-screening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Index (exclusive) of the last test record in the window.
    pub end: usize,
    pub dropped: Vec<String>,
    /// Kept features whose verdict flipped relative to the baseline.
    pub flipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub features: Vec<FeatureScreen>,
    pub threshold: f64,
    pub mode: ScreenMode,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
    /// First checkpoint end at which retraining is recommended.
    #[serde(default)]
    pub retrain_at: Option<usize>,
}

impl ScreenReport {
    pub fn kept(&self) -> Vec<String> {
        self.features
            .iter()
            .filter(|f| f.verdict == Verdict::Keep)
            .map(|f| f.feature.clone())
            .collect()
    }

    pub fn dropped(&self) -> Vec<String> {
        self.features
            .iter()
            .filter(|f| f.verdict == Verdict::Drop)
            .map(|f| f.feature.clone())
            .collect()
    }

    /// `feature,ks,ks_star,verdict`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "ks", "ks_star", "verdict"])?;
        for f in &self.features {
            let verdict = match f.verdict {
                Verdict::Keep => "keep",
                Verdict::Drop => "drop",
            };
            w.write_record([
                f.feature.clone(),
                f.ks.to_string(),
                f.ks_star.to_string(),
                verdict.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn compare_columns(
    reference: &TimeSeriesDataset,
    other: &TimeSeriesDataset,
    threshold: f64,
) -> Result<Vec<FeatureScreen>> {
    reference
        .meta()
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let a = Ecdf::new(&reference.features().column(j).to_vec())?;
            let b = Ecdf::new(&other.features().column(j).to_vec())?;
            let ks = ks_stat(&a, &b);
            let ks_star = ks_star_auto(&a, &b, (0.0, 1.0));
            let verdict = if m.degenerate || ks_star > threshold {
                Verdict::Drop
            } else {
                Verdict::Keep
            };
            Ok(FeatureScreen {
                feature: m.name.clone(),
                ks,
                ks_star,
                verdict,
                degenerate: m.degenerate,
            })
        })
        .collect()
}

/// Screens features for distribution stability.
///
/// Values are normalized with the training extremes before comparison.
pub fn screen(
    train: &TimeSeriesDataset,
    test: Option<&TimeSeriesDataset>,
    threshold: f64,
    mode: ScreenMode,
) -> Result<ScreenReport> {
    if train.len() < 2 {
        return Err(Error::EmptySample);
    }
    let train_n = normalize(train, None)?;
    let anchors: Vec<(f64, f64)> = train_n.meta().iter().map(|m| (m.train_min, m.train_max)).collect();
    let mut report = ScreenReport {
        features: Vec::new(),
        threshold,
        mode,
        checkpoints: Vec::new(),
        retrain_at: None,
    };
    match mode {
        ScreenMode::TrainVsTest => {
            let test =
                test.ok_or_else(|| Error::InvalidParameter("train_vs_test screening needs a test set".into()))?;
            check_columns(train, test)?;
            let test_n = normalize(test, Some(&anchors))?;
            report.features = compare_columns(&train_n, &test_n, threshold)?;
        }
        ScreenMode::SplitHalf => {
            let half = train_n.len() / 2;
            report.features = compare_columns(&train_n.slice(0, half), &train_n.slice(half, train_n.len()), threshold)?;
            mark_degenerate(&mut report.features, &train_n);
        }
        ScreenMode::Periodic { every, window } => {
            let test = test.ok_or_else(|| Error::InvalidParameter("periodic screening needs a test stream".into()))?;
            if every == 0 || window == 0 {
                return Err(Error::InvalidParameter("periodic every/window must be >= 1".into()));
            }
            check_columns(train, test)?;
            let test_n = normalize(test, Some(&anchors))?;
            let half = train_n.len() / 2;
            let baseline = compare_columns(&train_n.slice(0, half), &train_n.slice(half, train_n.len()), threshold)?;
            let mut latest = baseline.clone();
            let mut end = every.min(test_n.len());
            while end <= test_n.len() && end > 0 {
                let start = end.saturating_sub(window);
                let current = compare_columns(&train_n, &test_n.slice(start, end), threshold)?;
                let flipped: Vec<String> = baseline
                    .iter()
                    .zip(&current)
                    .filter(|(b, c)| b.verdict == Verdict::Keep && c.verdict == Verdict::Drop)
                    .map(|(b, _)| b.feature.clone())
                    .collect();
                if !flipped.is_empty() && report.retrain_at.is_none() {
                    report.retrain_at = Some(end);
                }
                report.checkpoints.push(Checkpoint {
                    end,
                    dropped: current
                        .iter()
                        .filter(|c| c.verdict == Verdict::Drop)
                        .map(|c| c.feature.clone())
                        .collect(),
                    flipped,
                });
                latest = current;
                if end == test_n.len() {
                    break;
                }
                end = (end + every).min(test_n.len());
            }
            report.features = latest;
        }
    }
    Ok(report)
}

fn check_columns(train: &TimeSeriesDataset, test: &TimeSeriesDataset) -> Result<()> {
    if train.feature_names() != test.feature_names() {
        return Err(Error::shape(
            format!("{:?}", train.feature_names()),
            format!("{:?}", test.feature_names()),
        ));
    }
    Ok(())
}

fn mark_degenerate(features: &mut [FeatureScreen], ds: &TimeSeriesDataset) {
    for (f, m) in features.iter_mut().zip(ds.meta()) {
        if m.degenerate {
            f.degenerate = true;
            f.verdict = Verdict::Drop;
        }
    }
}

//! Record-level precision/recall/F1 and the BATADAL composite score.
//!
//! The composite follows the competition's published conventions:
//! time-to-detection is normalised by attack duration, and the
//! classification part is balanced accuracy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::runs;

pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// `None` when nothing was alerted.
    pub precision: Option<f64>,
    /// `None` when nothing is labeled attack.
    pub recall: Option<f64>,
    pub f1: f64,
}

fn check_len(labels: &[bool], alerts: &[bool]) -> Result<()> {
    if labels.len() != alerts.len() {
        return Err(Error::shape(format!("{} alerts", labels.len()), alerts.len()));
    }
    Ok(())
}

pub fn point_metrics(labels: &[bool], alerts: &[bool]) -> Result<PointMetrics> {
    check_len(labels, alerts)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&l, &a) in labels.iter().zip(alerts) {
        match (l, a) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    };
    Ok(PointMetrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
    })
}

/// Maximal labeled attack intervals, inclusive.
pub fn attack_intervals(labels: &[bool]) -> Vec<(usize, usize)> {
    runs(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatadalScore {
    pub s: f64,
    pub s_ttd: f64,
    pub s_clf: f64,
    pub gamma: f64,
}

/// `S = γ S_TTD + (1-γ) S_CLF`.
///
/// `S_TTD = 1 - mean(ttd / duration)` over attack intervals, where an
/// interval without an alert contributes a ratio of 1. `S_CLF` is the mean
/// of TPR and TNR; a series without normal records has TNR 1.
pub fn batadal_score(labels: &[bool], alerts: &[bool], gamma: f64) -> Result<BatadalScore> {
    check_len(labels, alerts)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must be in [0,1], got {gamma}")));
    }
    let intervals = attack_intervals(labels);
    if intervals.is_empty() {
        return Err(Error::NoAttackIntervals);
    }
    let ratio_sum: f64 = intervals
        .iter()
        .map(|&(s, e)| {
            let duration = (e - s + 1) as f64;
            match (s..=e).find(|&i| alerts[i]) {
                Some(i) => (i - s) as f64 / duration,
                None => 1.0,
            }
        })
        .sum();
    let s_ttd = 1.0 - ratio_sum / intervals.len() as f64;
    let m = point_metrics(labels, alerts)?;
    let tpr = m.recall.unwrap_or(0.0);
    let tnr = if m.tn + m.fp == 0 {
        1.0
    } else {
        m.tn as f64 / (m.tn + m.fp) as f64
    };
    let s_clf = (tpr + tnr) / 2.0;
    Ok(BatadalScore {
        s: gamma * s_ttd + (1.0 - gamma) * s_clf,
        s_ttd,
        s_clf,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: PointMetrics,
    pub attacks_total: usize,
    /// Attack intervals overlapped by at least one alert.
    pub attacks_detected: usize,
    pub batadal: Option<BatadalScore>,
}

/// Full report; the composite score is omitted when there are no attacks.
pub fn evaluate(labels: &[bool], alerts: &[bool], gamma: f64) -> Result<EvalReport> {
    let metrics = point_metrics(labels, alerts)?;
    let intervals = attack_intervals(labels);
    let attacks_detected = intervals
        .iter()
        .filter(|&&(s, e)| alerts[s..=e].iter().any(|&a| a))
        .count();
    let batadal = match batadal_score(labels, alerts, gamma) {
        Ok(b) => Some(b),
        Err(Error::NoAttackIntervals) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        metrics,
        attacks_total: intervals.len(),
        attacks_detected,
        batadal,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "precision={}", opt(m.precision));
        let _ = writeln!(s, "recall={}", opt(m.recall));
        let _ = writeln!(s, "f1={:.6}", m.f1);
        let _ = writeln!(s, "tp={}\nfp={}\nfn={}\ntn={}", m.tp, m.fp, m.fn_, m.tn);
        let _ = writeln!(s, "attacks_detected={}", self.attacks_detected);
        let _ = writeln!(s, "attacks_total={}", self.attacks_total);
        if let Some(b) = &self.batadal {
            let _ = writeln!(
                s,
                "s={:.6}\ns_ttd={:.6}\ns_clf={:.6}\ngamma={}",
                b.s, b.s_ttd, b.s_clf, b.gamma
            );
            let _ = writeln!(s, "s_clf_convention=balanced_accuracy");
        }
        s
    }

    pub const CSV_HEADER: &'static str =
        "precision,recall,f1,tp,fp,fn,tn,attacks_detected,attacks_total,s,s_ttd,s_clf,gamma";

    /// One CSV row matching [`Self::CSV_HEADER`]; undefined values are empty.
    pub fn to_csv_row(&self) -> String {
        let m = &self.metrics;
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let b = self.batadal;
        format!(
            "{},{},{:.6},{},{},{},{},{},{},{},{},{},{}",
            f(m.precision),
            f(m.recall),
            m.f1,
            m.tp,
            m.fp,
            m.fn_,
            m.tn,
            self.attacks_detected,
            self.attacks_total,
            f(b.map(|b| b.s)),
            f(b.map(|b| b.s_ttd)),
            f(b.map(|b| b.s_clf)),
            f(b.map(|b| b.gamma)),
        )
    }
}

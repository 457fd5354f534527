//! End-to-end scenarios on simulated corpora, plus the optional run on
//! user-supplied water-network files.

use std::time::{Duration, Instant};

use physdetect::adversarial::{
    build_wrapper, find_adversarial, intent_check, AdversarialConfig, Comparison, Constraints, Intent, Verdict,
};
use physdetect::data::{ingest_csv, subsample, CsvSchema, SubsampleMethod, TimeSeriesDataset};
use physdetect::detector::{DetectorKind, DetectorSpec, FittedDetector};
use physdetect::eval::{evaluate, EvalReport};
use physdetect::freq::{apply_plan, fit_plan, FreqConfig};
use physdetect::scoring::{alert, localize, runs, tune, AlertSeries, DetectorConfig, Scheme};
use physdetect::screen::{screen, ScreenMode};
use physdetect::synth::{frequency_corpus_config, inject, Attack, AttackKind, AttackScript, ProcessConfig};

use super::{ensure, Outcome};

const TAUS: std::ops::RangeInclusive<u32> = 2..=60;
const WINDOWS: [usize; 8] = [1, 2, 3, 5, 8, 12, 20, 30];
const FP_MAX: usize = 1;

fn taus() -> Vec<f64> {
    TAUS.map(|i| f64::from(i) * 0.1).collect()
}

fn uae_spec(scheme: Scheme) -> DetectorSpec {
    let mut spec = DetectorSpec::new(DetectorKind::Uae);
    spec.train.max_epochs = 30;
    spec.train.target_train_error = 1e-4;
    spec.scheme = scheme;
    spec
}

struct Run {
    det: FittedDetector,
    cfg: DetectorConfig,
    alerts: AlertSeries,
    report: EvalReport,
    false_alarm_runs: usize,
    normalized: ndarray::Array2<f64>,
}

/// Fits on the first 80% of `train`, tunes on the rest, scores `test`.
fn fit_tune_detect(
    spec: &DetectorSpec,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    windows: &[usize],
) -> Result<Run, String> {
    let n = train.len();
    let split = n * 4 / 5;
    let det = FittedDetector::fit(spec, &train.slice(0, split)).map_err(|e| e.to_string())?;
    let val = det.score(&train.slice(split, n)).map_err(|e| e.to_string())?;
    let cfg = tune(val.normalized.view(), &taus(), windows, FP_MAX, spec.scheme).map_err(|e| e.to_string())?;
    let scored = det.score(test).map_err(|e| e.to_string())?;
    let alerts = alert(scored.normalized.view(), &cfg).map_err(|e| e.to_string())?;
    let labels = test.labels().ok_or("test set has no labels")?;
    let report = evaluate(labels, &alerts.alerts, 0.5).map_err(|e| e.to_string())?;
    let false_alarm_runs = runs(&alerts.alerts)
        .iter()
        .filter(|&&(s, e)| !labels[s..=e].iter().any(|&l| l))
        .count();
    Ok(Run {
        det,
        cfg,
        alerts,
        report,
        false_alarm_runs,
        normalized: scored.normalized,
    })
}

/// Attacks whose highest-peak overlapping alert run ranks the target in its top two.
fn localized(run: &Run, test: &TimeSeriesDataset, script: &AttackScript) -> Result<usize, String> {
    let recs = localize(&run.alerts, run.normalized.view(), &run.det.features, test.timestamps())
        .map_err(|e| e.to_string())?;
    Ok(script
        .attacks
        .iter()
        .filter(|a| {
            recs.iter()
                .filter(|r| r.start < a.end && r.end >= a.start)
                .max_by(|x, y| x.peak_residual.total_cmp(&y.peak_residual))
                .is_some_and(|r| r.features.iter().take(2).any(|(f, _)| *f == a.target))
        })
        .count())
}

pub fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let script = AttackScript::default_test();
    let corpus = inject(&ProcessConfig::default(), &script).map_err(|e| e.to_string())?;
    let uae = fit_tune_detect(&uae_spec(Scheme::Zscore), &corpus.train, &corpus.test, &WINDOWS)?;
    let mut wpca_spec = DetectorSpec::new(DetectorKind::Wpca);
    wpca_spec.wpca.width = 7;
    wpca_spec.wpca.components = Some(32);
    wpca_spec.scheme = Scheme::MaxNorm;
    let wpca = fit_tune_detect(&wpca_spec, &corpus.train, &corpus.test, &WINDOWS)?;
    let elapsed = start.elapsed();

    let mut detail = Vec::new();
    for (name, run) in [("uae", &uae), ("wpca", &wpca)] {
        let f1 = run.report.metrics.f1;
        ensure(f1 >= 0.80, || format!("{name} F1 {f1:.3} < 0.80 (tuned {:?})", run.cfg))?;
        ensure(run.false_alarm_runs <= FP_MAX, || {
            format!("{name}: {} false-alarm runs", run.false_alarm_runs)
        })?;
        detail.push(format!("{name} F1 {f1:.3} ({} false-alarm runs)", run.false_alarm_runs));
    }
    let hits = localized(&uae, &corpus.test, &script)?;
    ensure(hits >= 3, || format!("target in top-2 for only {hits} of 4 attacks"))?;
    ensure(elapsed < Duration::from_secs(180), || format!("took {elapsed:?}"))?;
    Ok(format!("{}, localized {hits}/4, {elapsed:.1?}", detail.join(", ")))
}

fn frequency_run() -> Result<(Run, Run), String> {
    let (cfg, script, k) = frequency_corpus_config();
    let corpus = inject(&cfg, &script).map_err(|e| e.to_string())?;
    let feats = vec!["level1".to_string(), "valve1".to_string()];
    let prep = |ds: &TimeSeriesDataset| {
        subsample(ds, k, SubsampleMethod::Decimate)
            .and_then(|d| d.select(&feats))
            .map_err(|e| e.to_string())
    };
    let (train, test) = (prep(&corpus.train)?, prep(&corpus.test)?);
    let plan = fit_plan(
        &train,
        &FreqConfig {
            ratio: 2.0,
            ..FreqConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let ftrain = apply_plan(&plan, &train).map_err(|e| e.to_string())?;
    let ftest = apply_plan(&plan, &test).map_err(|e| e.to_string())?;
    let spec = uae_spec(Scheme::MaxNorm);
    let time = fit_tune_detect(&spec, &train, &test, &WINDOWS)?;
    let freq = fit_tune_detect(&spec, &ftrain, &ftest, &WINDOWS)?;
    Ok((time, freq))
}

pub fn frequency_mode() -> Outcome {
    let (time, freq) = frequency_run()?;
    let (fr, tr) = (
        freq.report.metrics.recall.unwrap_or(0.0),
        time.report.metrics.recall.unwrap_or(0.0),
    );
    ensure(
        freq.report.attacks_detected == 1 && fr >= 0.8 && freq.report.metrics.f1 >= 0.8,
        || format!("frequency mode recall {fr:.3}, F1 {:.3}", freq.report.metrics.f1),
    )?;
    ensure(tr <= 0.2, || format!("time mode recall {tr:.3} (expected a miss)"))?;
    let (time2, freq2) = frequency_run()?;
    ensure(
        time2.alerts.alerts == time.alerts.alerts && freq2.alerts.alerts == freq.alerts.alerts,
        || "repeated run produced different alerts".into(),
    )?;
    Ok(format!(
        "frequency recall {fr:.3} F1 {:.3}; time recall {tr:.3} F1 {:.3}; repeat identical",
        freq.report.metrics.f1, time.report.metrics.f1
    ))
}

const SPOOF: (usize, usize) = (300, 600);
const INTENT_LEVEL: f64 = 700.0;

struct Search {
    verdict: Verdict,
    final_residual: f64,
    tau: f64,
    intent: bool,
    max_noise: Vec<f64>,
    elapsed: Duration,
}

/// Single-tank fixed spoof of `level1`, attacked against a detector on `feats`.
fn adversarial_search(feats: &[&str], epsilon: Option<f64>) -> Result<Search, String> {
    let mut pc = ProcessConfig::single_tank();
    pc.train_steps = 6000;
    pc.test_steps = 1200;
    let script = AttackScript {
        attacks: vec![Attack {
            start: SPOOF.0,
            end: SPOOF.1,
            target: "level1".into(),
            kind: AttackKind::SensorSpoofFixed { value: 750.0 },
        }],
    };
    let corpus = inject(&pc, &script).map_err(|e| e.to_string())?;
    let names: Vec<String> = feats.iter().map(|s| s.to_string()).collect();
    let train = corpus.train.select(&names).map_err(|e| e.to_string())?;
    let spec = uae_spec(Scheme::MaxNorm);
    let n = train.len();
    let det = FittedDetector::fit(&spec, &train.slice(0, n * 4 / 5)).map_err(|e| e.to_string())?;
    let val = det.score(&train.slice(n * 4 / 5, n)).map_err(|e| e.to_string())?;
    let cfg = tune(val.normalized.view(), &taus(), &[1], FP_MAX, spec.scheme).map_err(|e| e.to_string())?;

    let test = det
        .prepare(&corpus.test.select(&names).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let wrapper = build_wrapper(&det).map_err(|e| e.to_string())?;
    let x = test.features().clone();
    let phi = Constraints::from_meta(test.meta());
    let acfg = AdversarialConfig {
        tau: cfg.tau,
        epsilon,
        max_iterations: 5000,
        ..AdversarialConfig::default()
    };
    let start = Instant::now();
    let res = find_adversarial(&wrapper, x.view(), &phi, &acfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let level = det
        .features
        .iter()
        .position(|f| f == "level1")
        .ok_or("level1 not modeled")?;
    let (lo, hi) = det.anchors[level];
    let intent = Intent {
        feature: level,
        start: SPOOF.0,
        end: SPOOF.1,
        comparison: Comparison::AtLeast,
        value: (INTENT_LEVEL - lo) / (hi - lo),
    };
    let intent = intent_check(x.view(), res.x_adv.view(), &intent).map_err(|e| e.to_string())?;
    Ok(Search {
        verdict: res.verdict,
        final_residual: res.final_residual(),
        tau: cfg.tau,
        intent,
        max_noise: res.noise_trace.clone(),
        elapsed,
    })
}

pub fn adversarial_reproduction() -> Outcome {
    let single = adversarial_search(&["level1"], None)?;
    ensure(
        single.verdict == Verdict::Evaded && single.final_residual < single.tau,
        || {
            format!(
                "single-feature verdict {:?}, residual {:.3} vs tau {}",
                single.verdict, single.final_residual, single.tau
            )
        },
    )?;
    let pair = adversarial_search(&["level1", "valve1"], None)?;
    ensure(pair.verdict == Verdict::Failed || !pair.intent, || {
        format!(
            "two-feature search evaded with the spoof intact (residual {:.3})",
            pair.final_residual
        )
    })?;
    let eps = 0.05;
    let bounded = adversarial_search(&["level1"], Some(eps))?;
    let worst = bounded.max_noise.iter().copied().fold(0.0, f64::max);
    ensure(worst <= eps + 1e-12, || format!("noise {worst} exceeds epsilon {eps}"))?;
    for (name, s) in [("single", &single), ("pair", &pair), ("bounded", &bounded)] {
        ensure(s.elapsed < Duration::from_secs(60), || {
            format!("{name} search took {:?}", s.elapsed)
        })?;
    }
    Ok(format!(
        "single {:?} ({:.2?}); pair {:?}, intent {} ({:.2?}); eps {eps}: {:?}, max |noise| {worst:.3} over {} recorded points",
        single.verdict,
        single.elapsed,
        pair.verdict,
        pair.intent,
        pair.elapsed,
        bounded.verdict,
        bounded.max_noise.len()
    ))
}

pub const BATADAL_TRAIN_ENV: &str = "PHYSDETECT_BATADAL_TRAIN";
pub const BATADAL_TEST_ENV: &str = "PHYSDETECT_BATADAL_TEST";

/// `None` unless both file paths are set in the environment.
pub fn batadal_dataset() -> Option<Outcome> {
    let train = std::env::var(BATADAL_TRAIN_ENV).ok()?;
    let test = std::env::var(BATADAL_TEST_ENV).ok()?;
    Some(batadal_run(&train, &test))
}

fn batadal_run(train: &str, test: &str) -> Outcome {
    let start = Instant::now();
    let schema = CsvSchema {
        timestamp: "DATETIME".into(),
        label: Some("ATT_FLAG".into()),
        timestamp_format: Some("%d/%m/%y %H".into()),
        ..CsvSchema::default()
    };
    let train = ingest_csv(train, &schema).map_err(|e| e.to_string())?;
    let test = ingest_csv(test, &schema).map_err(|e| e.to_string())?;
    let report = screen(&train, Some(&test), 0.1, ScreenMode::TrainVsTest).map_err(|e| e.to_string())?;
    let dropped = report.dropped();
    ensure(dropped.iter().any(|f| f == "P_J280"), || {
        format!("screening dropped {dropped:?}")
    })?;
    let kept = report.kept();
    let train = train.select(&kept).map_err(|e| e.to_string())?;
    let test = test.select(&kept).map_err(|e| e.to_string())?;
    let run = fit_tune_detect(&uae_spec(Scheme::Zscore), &train, &test, &WINDOWS)?;
    let s = run.report.batadal.map(|b| b.s).unwrap_or(0.0);
    let f1 = run.report.metrics.f1;
    let elapsed = start.elapsed();
    ensure(s >= 0.87 && f1 >= 0.85, || format!("S {s:.3}, F1 {f1:.3}"))?;
    ensure(elapsed < Duration::from_secs(900), || format!("took {elapsed:?}"))?;
    Ok(format!("dropped {dropped:?}, S {s:.3}, F1 {f1:.3}, {elapsed:.1?}"))
}

//! One function per subcommand. Every command reads and writes plain
//! files in the output directory so that stages compose.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use physdetect::adversarial::{build_wrapper, find_adversarial, intent_check, Constraints, Intent};
use physdetect::data::{ingest_csv, subsample, TimeSeriesDataset};
use physdetect::detector::{DetectorKind, FittedDetector};
use physdetect::eval::evaluate;
use physdetect::freq::{apply_plan, band_energies, fit_plan, FrequencyPlan};
use physdetect::scoring::{alert, localize, tune, write_alerts_csv, DetectorConfig, ResidualSeries};
use physdetect::screen::screen;
use physdetect::synth::inject;
use serde::{Deserialize, Serialize};

use crate::config::{digest, Domain, RunConfig};
use crate::error::{CliError, CliResult};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A fitted detector together with the input pipeline it was fitted on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    /// Time-domain features read from the CSV, before any spectral transform.
    pub input_features: Vec<String>,
    pub subsample: usize,
    pub plan: Option<FrequencyPlan>,
    pub detector: FittedDetector,
}

/// Shared context: resolved configuration and output directory.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Ctx {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn train_path(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.cfg.data.train.clone())
            .unwrap_or_else(|| self.path("train.csv"))
    }

    fn test_path(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.cfg.data.test.clone())
            .unwrap_or_else(|| self.path("test.csv"))
    }

    /// Reads a CSV and applies the configured valid ranges and subsampling.
    fn load(&self, path: &Path, labeled: bool) -> CliResult<TimeSeriesDataset> {
        if !path.exists() {
            return Err(CliError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        let schema = self.cfg.data.schema.to_schema(labeled);
        let mut ds = ingest_csv(path, &schema)?;
        if ds.skipped_rows() > 0 {
            log::warn!("{}: skipped {} malformed rows", path.display(), ds.skipped_rows());
        }
        if !self.cfg.data.valid_ranges.is_empty() {
            let mut meta = ds.meta().to_vec();
            for m in &mut meta {
                if let Some(&r) = self.cfg.data.valid_ranges.get(&m.name) {
                    m.valid_range = r;
                }
            }
            ds = TimeSeriesDataset::new(
                ds.timestamps().to_vec(),
                ds.features().clone(),
                ds.labels().map(<[bool]>::to_vec),
                meta,
            )?;
        }
        if self.cfg.data.subsample > 1 {
            ds = subsample(&ds, self.cfg.data.subsample, self.cfg.data.subsample_method)?;
        }
        if !self.cfg.data.features.is_empty() {
            ds = ds.select(&self.cfg.data.features)?;
        }
        Ok(ds)
    }

    /// Training records, labeled when the file has a label column.
    fn load_train(&self, flag: Option<&Path>) -> CliResult<TimeSeriesDataset> {
        let path = self.train_path(flag);
        let labeled = has_column(&path, self.cfg.data.schema.label.as_deref())?;
        self.load(&path, labeled)
    }

    fn load_test(&self, flag: Option<&Path>) -> CliResult<TimeSeriesDataset> {
        self.load(&self.test_path(flag), true)
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        File::create(&p).map(BufWriter::new).map_err(|e| CliError::io(&p, e))
    }

    fn write_dataset(&self, name: &str, ds: &TimeSeriesDataset) -> CliResult<()> {
        ds.write_csv(self.create(name)?)?;
        Ok(())
    }
}

fn has_column(path: &Path, column: Option<&str>) -> CliResult<bool> {
    let Some(column) = column else { return Ok(false) };
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    })?;
    let headers = r.headers().map_err(physdetect::Error::from)?;
    Ok(headers.iter().any(|h| h.trim() == column))
}

/// Re-running a step with identical configuration and inputs is skipped.
pub struct Stamp {
    file: PathBuf,
    hash: String,
    outputs: Vec<PathBuf>,
}

impl Stamp {
    pub fn new(ctx: &Ctx, command: &str, args: &str, inputs: &[PathBuf], outputs: &[&str]) -> CliResult<Self> {
        let config = ctx.cfg.to_toml()?;
        let mut blobs = vec![("command".to_string(), command.as_bytes().to_vec())];
        blobs.push(("args".into(), args.as_bytes().to_vec()));
        blobs.push(("config".into(), config.into_bytes()));
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            blobs.push((p.display().to_string(), bytes));
        }
        let hash = digest(blobs.iter().map(|(l, b)| (l.as_str(), b.as_slice())));
        Ok(Self {
            file: ctx.path(&format!(".{command}.stamp")),
            hash,
            outputs: outputs.iter().map(|o| ctx.path(o)).collect(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn is_current(&self) -> bool {
        fs::read_to_string(&self.file).is_ok_and(|s| s.trim() == self.hash) && self.outputs.iter().all(|o| o.exists())
    }

    pub fn record(&self) -> CliResult<()> {
        fs::write(&self.file, &self.hash).map_err(|e| CliError::io(&self.file, e))
    }
}

/// Runs `body` unless an identical earlier run left its outputs in place.
pub fn stamped(
    ctx: &Ctx,
    command: &str,
    args: &str,
    inputs: &[PathBuf],
    outputs: &[&str],
    body: impl FnOnce() -> CliResult<()>,
) -> CliResult<()> {
    let stamp = Stamp::new(ctx, command, args, inputs, outputs)?;
    if !ctx.force && stamp.is_current() {
        eprintln!(
            "note: `{command}` is up to date (config hash {}); nothing to do. Pass --force to rerun.",
            &stamp.hash()[..12]
        );
        return Ok(());
    }
    ctx.write_text(&format!("{command}.config.toml"), &ctx.cfg.to_toml()?)?;
    body()?;
    stamp.record()
}

pub fn synth(ctx: &Ctx) -> CliResult<()> {
    let outputs = ["train.csv", "test.csv", "true_levels.csv", "attacks.json"];
    stamped(ctx, "synth", "", &[], &outputs, || {
        let script = ctx.cfg.synth.attacks();
        let corpus = inject(&ctx.cfg.synth.process, &script)?;
        ctx.write_dataset("train.csv", &corpus.train)?;
        ctx.write_dataset("test.csv", &corpus.test)?;
        let mut w = csv::Writer::from_writer(ctx.create("true_levels.csv")?);
        let n = corpus.true_levels.ncols();
        let mut header = vec!["timestamp".to_string()];
        header.extend((1..=n).map(|i| format!("true_level{i}")));
        header.push("overflow".into());
        w.write_record(&header).map_err(physdetect::Error::from)?;
        for (i, row) in corpus.true_levels.outer_iter().enumerate() {
            let mut rec = vec![corpus.test.timestamps()[i].to_string()];
            rec.extend(row.iter().map(f64::to_string));
            rec.push(u8::from(corpus.overflow[i]).to_string());
            w.write_record(&rec).map_err(physdetect::Error::from)?;
        }
        w.flush().map_err(|e| CliError::io(ctx.path("true_levels.csv"), e))?;
        ctx.write_text(
            "attacks.json",
            &serde_json::to_string_pretty(&script).map_err(physdetect::Error::from)?,
        )?;
        println!(
            "wrote {} training and {} test records ({} attacks) to {}",
            corpus.train.len(),
            corpus.test.len(),
            script.attacks.len(),
            ctx.out.display()
        );
        Ok(())
    })
}

pub fn screen_cmd(ctx: &Ctx, train: Option<&Path>, test: Option<&Path>) -> CliResult<()> {
    let inputs = vec![ctx.train_path(train), ctx.test_path(test)];
    let args = format!("{inputs:?}");
    stamped(ctx, "screen", &args, &inputs, &["screen.csv", "screen.json"], || {
        let tr = ctx.load_train(train)?;
        let te = ctx.load_test(test)?;
        let report = screen(&tr, Some(&te), ctx.cfg.screen.threshold, ctx.cfg.screen.mode)?;
        report.write_csv(ctx.create("screen.csv")?)?;
        ctx.write_text(
            "screen.json",
            &serde_json::to_string_pretty(&report).map_err(physdetect::Error::from)?,
        )?;
        println!("kept: {}", report.kept().join(","));
        println!("dropped: {}", report.dropped().join(","));
        if let Some(at) = report.retrain_at {
            println!("retraining recommended from test record {at}");
        }
        Ok(())
    })
}

pub fn freq(ctx: &Ctx, train: Option<&Path>, test: Option<&Path>) -> CliResult<()> {
    let inputs = vec![ctx.train_path(train), ctx.test_path(test)];
    let args = format!("{inputs:?}");
    let outputs = ["plan.json", "train_freq.csv", "test_freq.csv"];
    stamped(ctx, "freq", &args, &inputs, &outputs, || {
        let tr = ctx.load_train(train)?;
        let te = ctx.load_test(test)?;
        let plan = fit_plan(&tr, &ctx.cfg.freq)?;
        ctx.write_dataset("train_freq.csv", &apply_plan(&plan, &tr)?)?;
        ctx.write_dataset("test_freq.csv", &apply_plan(&plan, &te)?)?;
        ctx.write_text(
            "plan.json",
            &serde_json::to_string_pretty(&plan).map_err(physdetect::Error::from)?,
        )?;
        for f in &plan.features {
            println!(
                "{}: period {:.3} samples, window {} bands {:?}",
                f.feature, f.profile.period_samples, f.window, f.bands
            );
        }
        for (name, why) in &plan.excluded {
            println!("{name}: excluded ({why})");
        }
        Ok(())
    })
}

/// Overrides accepted by `fit`.
#[derive(Debug, Default)]
pub struct FitOverrides {
    pub seq_len: Option<usize>,
    pub depth: Option<usize>,
    pub epochs: Option<usize>,
    pub components: Option<usize>,
}

/// Applies `fit` overrides to the configuration so the resolved file shows them.
pub fn apply_fit_overrides(cfg: &mut RunConfig, kind: DetectorKind, o: &FitOverrides) {
    let d = &mut cfg.detector;
    d.kind = kind;
    if let Some(l) = o.seq_len {
        match kind {
            DetectorKind::Uae => d.uae.seq_len = l,
            DetectorKind::Cnn => d.cnn.seq_len = l,
            DetectorKind::Wpca => d.wpca.width = l,
            DetectorKind::Pca => {}
        }
    }
    if let Some(depth) = o.depth {
        d.cnn.depth = depth;
    }
    if let Some(e) = o.epochs {
        d.train.max_epochs = e;
    }
    if let Some(c) = o.components {
        d.pca.components = Some(c);
        d.wpca.components = Some(c);
    }
}

fn split(ctx: &Ctx, ds: &TimeSeriesDataset) -> CliResult<(TimeSeriesDataset, TimeSeriesDataset)> {
    let n = ds.len();
    let cut = ((n as f64) * (1.0 - ctx.cfg.tuning.validation_fraction)).round() as usize;
    if cut < 2 || cut >= n {
        return Err(CliError::Config(format!(
            "training set of {n} records is too short for a validation split of {}",
            ctx.cfg.tuning.validation_fraction
        )));
    }
    Ok((ds.slice(0, cut), ds.slice(cut, n)))
}

pub fn fit(ctx: &Ctx, train: Option<&Path>) -> CliResult<()> {
    let inputs = vec![ctx.train_path(train)];
    let args = format!("{inputs:?}");
    stamped(ctx, "fit", &args, &inputs, &["model.json", "loss.csv"], || {
        let tr = ctx.load_train(train)?;
        let (fit_part, _) = split(ctx, &tr)?;
        let plan = match ctx.cfg.domain {
            Domain::Time => None,
            Domain::Frequency => Some(fit_plan(&fit_part, &ctx.cfg.freq)?),
        };
        let modeled = match &plan {
            Some(p) => apply_plan(p, &fit_part)?,
            None => fit_part.clone(),
        };
        let spec = &ctx.cfg.detector;
        let detector = FittedDetector::fit(spec, &modeled)?;
        let mut w = csv::Writer::from_writer(ctx.create("loss.csv")?);
        w.write_record(["epoch", "loss"]).map_err(physdetect::Error::from)?;
        for (i, l) in detector.loss_history.iter().enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string()])
                .map_err(physdetect::Error::from)?;
        }
        w.flush().map_err(|e| CliError::io(ctx.path("loss.csv"), e))?;
        let art = ModelArtifact {
            format_version: MODEL_FORMAT_VERSION,
            input_features: tr.feature_names(),
            subsample: ctx.cfg.data.subsample,
            plan,
            detector,
        };
        ctx.write_text(
            "model.json",
            &serde_json::to_string(&art).map_err(physdetect::Error::from)?,
        )?;
        println!(
            "fitted {:?} on {} records x {} features{}",
            spec.kind,
            modeled.len(),
            modeled.n_features(),
            art.detector
                .loss_history
                .last()
                .map_or(String::new(), |l| format!(", final loss {l:.3e}"))
        );
        Ok(())
    })
}

fn load_model(path: &Path) -> CliResult<ModelArtifact> {
    let text = fs::read_to_string(path).map_err(|e| CliError::NotAModel {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let art: ModelArtifact = serde_json::from_str(&text).map_err(|e| CliError::NotAModel {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if art.format_version != MODEL_FORMAT_VERSION {
        return Err(physdetect::Error::FormatVersion(art.format_version).into());
    }
    // re-validates the detector's internal consistency
    FittedDetector::from_json(&serde_json::to_string(&art.detector).map_err(physdetect::Error::from)?)?;
    Ok(art)
}

impl ModelArtifact {
    /// Brings a loaded dataset into the space the detector was fitted in.
    fn transform(&self, ds: &TimeSeriesDataset) -> CliResult<TimeSeriesDataset> {
        let ds = ds.select(&self.input_features)?;
        Ok(match &self.plan {
            Some(p) => apply_plan(p, &ds)?,
            None => ds,
        })
    }

    fn score(&self, ds: &TimeSeriesDataset) -> CliResult<(TimeSeriesDataset, ResidualSeries)> {
        let x = self.transform(ds)?;
        let r = self.detector.score(&x)?;
        Ok((x, r))
    }
}

fn model_path(ctx: &Ctx, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("model.json"))
}

fn tuned_path(ctx: &Ctx, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("tuned.json"))
}

pub fn tune_cmd(ctx: &Ctx, model: Option<&Path>, train: Option<&Path>) -> CliResult<()> {
    let mp = model_path(ctx, model);
    let art = load_model(&mp)?;
    let inputs = vec![mp, ctx.train_path(train)];
    let args = format!("{inputs:?}");
    stamped(ctx, "tune", &args, &inputs, &["tuned.json"], || {
        let tr = ctx.load_train(train)?;
        let (_, val) = split(ctx, &tr)?;
        let (_, r) = art.score(&val)?;
        let t = &ctx.cfg.tuning;
        let cfg = tune(
            r.normalized.view(),
            &t.tau_grid()?,
            &t.windows,
            t.fp_max,
            art.detector.stats.scheme(),
        )?;
        ctx.write_text(
            "tuned.json",
            &serde_json::to_string_pretty(&cfg).map_err(physdetect::Error::from)?,
        )?;
        println!("tau={} window={} scheme={:?}", cfg.tau, cfg.window, cfg.scheme);
        Ok(())
    })
}

fn load_tuned(path: &Path) -> CliResult<DetectorConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: DetectorConfig = serde_json::from_str(&text).map_err(physdetect::Error::from)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Explicit threshold settings for `detect`.
#[derive(Debug, Default)]
pub struct Threshold {
    pub tuned: Option<PathBuf>,
    pub tau: Option<f64>,
    pub window: Option<usize>,
}

fn resolve_threshold(ctx: &Ctx, th: &Threshold, art: &ModelArtifact) -> CliResult<(DetectorConfig, Vec<PathBuf>)> {
    let tp = tuned_path(ctx, th.tuned.as_deref());
    let (mut cfg, inputs) = match (th.tau, th.window) {
        (Some(tau), Some(window)) => (
            DetectorConfig {
                tau,
                window,
                scheme: art.detector.stats.scheme(),
            },
            Vec::new(),
        ),
        _ => (load_tuned(&tp)?, vec![tp]),
    };
    if let Some(tau) = th.tau {
        cfg.tau = tau;
    }
    if let Some(w) = th.window {
        cfg.window = w;
    }
    cfg.validate()?;
    Ok((cfg, inputs))
}

fn write_residuals<W: Write>(
    writer: W,
    x: &TimeSeriesDataset,
    r: &ResidualSeries,
    alerts: &[bool],
    cfg: &DetectorConfig,
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(x.feature_names());
    header.extend(["max", "tau", "alert", "label"].map(String::from));
    w.write_record(&header).map_err(physdetect::Error::from)?;
    for (i, row) in r.normalized.outer_iter().enumerate() {
        let mut rec = vec![x.timestamps()[i].to_string()];
        rec.extend(row.iter().map(f64::to_string));
        rec.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max).to_string());
        rec.push(cfg.tau.to_string());
        rec.push(u8::from(alerts[i]).to_string());
        rec.push(x.labels().map_or(String::new(), |l| u8::from(l[i]).to_string()));
        w.write_record(&rec).map_err(physdetect::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io("residual trace", e))?;
    Ok(())
}

pub fn detect(ctx: &Ctx, model: Option<&Path>, test: Option<&Path>, th: &Threshold) -> CliResult<()> {
    let mp = model_path(ctx, model);
    let art = load_model(&mp)?;
    let (cfg, tuned_inputs) = resolve_threshold(ctx, th, &art)?;
    let mut inputs = vec![mp, ctx.test_path(test)];
    inputs.extend(tuned_inputs);
    let args = format!("{inputs:?} {th:?}");
    stamped(ctx, "detect", &args, &inputs, &["residuals.csv", "alerts.csv"], || {
        let te = ctx.load_test(test)?;
        let (x, r) = art.score(&te)?;
        if r.flagged.iter().any(|&f| f) {
            let names: Vec<String> = x
                .feature_names()
                .into_iter()
                .zip(&r.flagged)
                .filter(|(_, &f)| f)
                .map(|(n, _)| n)
                .collect();
            log::warn!(
                "zero training spread for {}; any deviation there alerts",
                names.join(",")
            );
        }
        let a = alert(r.normalized.view(), &cfg)?;
        write_residuals(ctx.create("residuals.csv")?, &x, &r, &a.alerts, &cfg)?;
        let recs = localize(&a, r.normalized.view(), &x.feature_names(), x.timestamps())?;
        write_alerts_csv(&recs, ctx.cfg.eval.top_k, ctx.create("alerts.csv")?)?;
        let n_alert = a.alerts.iter().filter(|&&v| v).count();
        println!("{} alert runs covering {n_alert} of {} records", recs.len(), x.len());
        Ok(())
    })
}

/// Reads `alert` and `label` columns of a residual trace.
fn read_alert_series(path: &Path) -> CliResult<(Vec<bool>, Vec<bool>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    })?;
    let headers = r.headers().map_err(physdetect::Error::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::from(physdetect::Error::MissingColumn(name.into())))
    };
    let (ia, il) = (col("alert")?, col("label")?);
    let (mut alerts, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(physdetect::Error::from)?;
        let flag = |i: usize| match rec.get(i).map(str::trim) {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            other => Err(CliError::Config(format!(
                "{}: expected 0/1 in column {i}, found {other:?} (test set without labels?)",
                path.display()
            ))),
        };
        alerts.push(flag(ia)?);
        labels.push(flag(il)?);
    }
    Ok((alerts, labels))
}

pub fn eval(ctx: &Ctx, residuals: Option<&Path>) -> CliResult<()> {
    let rp = residuals
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path("residuals.csv"));
    let inputs = vec![rp.clone()];
    let args = format!("{inputs:?}");
    stamped(
        ctx,
        "eval",
        &args,
        &inputs,
        &["eval.txt", "eval.json", "eval.csv"],
        || {
            let (alerts, labels) = read_alert_series(&rp)?;
            let rep = evaluate(&labels, &alerts, ctx.cfg.eval.gamma)?;
            ctx.write_text("eval.txt", &rep.to_key_value())?;
            ctx.write_text(
                "eval.json",
                &serde_json::to_string_pretty(&rep).map_err(physdetect::Error::from)?,
            )?;
            ctx.write_text(
                "eval.csv",
                &format!("{}\n{}\n", physdetect::eval::EvalReport::CSV_HEADER, rep.to_csv_row()),
            )?;
            print!("{}", rep.to_key_value());
            Ok(())
        },
    )
}

/// Raw-unit threshold of an intent in the detector's normalized units.
fn normalized_value(art: &ModelArtifact, feature: usize, raw: f64) -> f64 {
    let (lo, hi) = art.detector.anchors[feature];
    if hi > lo {
        (raw - lo) / (hi - lo)
    } else {
        raw - lo
    }
}

pub fn advatk(ctx: &Ctx, model: Option<&Path>, test: Option<&Path>, tuned: Option<&Path>) -> CliResult<()> {
    let mp = model_path(ctx, model);
    let art = load_model(&mp)?;
    let wrapper = build_wrapper(&art.detector)?;
    let mut search = ctx.cfg.adversarial.search.clone();
    let mut inputs = vec![mp.clone(), ctx.test_path(test)];
    if ctx.cfg.adversarial.use_tuned_tau {
        let tp = tuned_path(ctx, tuned);
        search.tau = load_tuned(&tp)?.tau;
        inputs.push(tp);
    }
    let args = format!("{inputs:?}");
    stamped(
        ctx,
        "advatk",
        &args,
        &inputs,
        &["adv_trace.csv", "adv_summary.json"],
        || {
            let te = ctx.load_test(test)?;
            let x = art.detector.prepare(&art.transform(&te)?)?;
            let phi = Constraints::from_meta(x.meta());
            let mut res = find_adversarial(&wrapper, x.features().view(), &phi, &search)?;
            if let Some(ic) = &ctx.cfg.adversarial.intent {
                let feature = art
                    .detector
                    .features
                    .iter()
                    .position(|f| f == &ic.feature)
                    .ok_or_else(|| physdetect::Error::MissingColumn(ic.feature.clone()))?;
                let intent = Intent {
                    feature,
                    start: ic.start,
                    end: ic.end,
                    comparison: ic.comparison,
                    value: normalized_value(&art, feature, ic.value),
                };
                res.physical_intent_preserved = intent_check(x.features().view(), res.x_adv.view(), &intent)?;
            }
            res.write_trace_csv(&x, ctx.create("adv_trace.csv")?)?;
            let summary = res.summary_json()?;
            ctx.write_text("adv_summary.json", &summary)?;
            println!(
                "verdict={:?} iterations={} initial_residual={:.4} final_residual={:.4} tau={} intent_preserved={}",
                res.verdict,
                res.iterations,
                res.residual_trace[0],
                res.final_residual(),
                search.tau,
                res.physical_intent_preserved
            );
            Ok(())
        },
    )
}

/// Plot-ready CSVs: loss curve, residual trace and per-feature spectrograms.
pub fn report(ctx: &Ctx, model: Option<&Path>, test: Option<&Path>, tuned: Option<&Path>) -> CliResult<()> {
    let mp = model_path(ctx, model);
    let art = load_model(&mp)?;
    let th = Threshold {
        tuned: tuned.map(Path::to_path_buf),
        ..Default::default()
    };
    let (cfg, tuned_inputs) = resolve_threshold(ctx, &th, &art)?;
    let mut inputs = vec![mp, ctx.test_path(test)];
    inputs.extend(tuned_inputs);
    let args = format!("{inputs:?}");
    let outputs = ["report/loss_curve.csv", "report/residual_trace.csv"];
    stamped(ctx, "report", &args, &inputs, &outputs, || {
        let mut w = csv::Writer::from_writer(ctx.create("report/loss_curve.csv")?);
        w.write_record(["epoch", "loss"]).map_err(physdetect::Error::from)?;
        for (i, l) in art.detector.loss_history.iter().enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string()])
                .map_err(physdetect::Error::from)?;
        }
        w.flush().map_err(|e| CliError::io("loss curve", e))?;

        let te = ctx.load_test(test)?;
        let (x, r) = art.score(&te)?;
        let a = alert(r.normalized.view(), &cfg)?;
        write_residuals(ctx.create("report/residual_trace.csv")?, &x, &r, &a.alerts, &cfg)?;

        let raw = te.select(&art.input_features)?;
        let plan = match &art.plan {
            Some(p) => p.clone(),
            None => fit_plan(&raw, &ctx.cfg.freq)?,
        };
        for fp in &plan.features {
            let j = raw
                .feature_index(&fp.feature)
                .expect("plan features come from the input");
            let signal = raw.features().column(j).to_vec();
            if fp.window > signal.len() {
                continue;
            }
            let e = band_energies(&signal, fp.window, plan.config.step, plan.config.taper)?;
            let name = format!("report/spectrogram_{}.csv", fp.feature.replace(['/', '\\'], "_"));
            let mut w = csv::Writer::from_writer(ctx.create(&name)?);
            let mut header = vec!["timestamp".to_string()];
            header.extend((0..e.ncols()).map(|k| format!("band{k}")));
            w.write_record(&header).map_err(physdetect::Error::from)?;
            for (row, vals) in e.outer_iter().enumerate() {
                let end = row * plan.config.step + fp.window - 1;
                let mut rec = vec![raw.timestamps()[end].to_string()];
                rec.extend(vals.iter().map(f64::to_string));
                w.write_record(&rec).map_err(physdetect::Error::from)?;
            }
            w.flush().map_err(|e| CliError::io(&name, e))?;
        }
        println!("wrote plot data to {}", ctx.path("report").display());
        Ok(())
    })
}

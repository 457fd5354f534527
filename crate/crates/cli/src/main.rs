//! `physdetect`: file-based pipeline from data generation to adversarial
//! evaluation. Each subcommand reads and writes artifacts in `--out`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use physdetect::detector::DetectorKind;

use crate::commands::{Ctx, FitOverrides, Threshold};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "physdetect",
    version,
    about = "Physics-based attack detection for industrial control telemetry"
)]
struct Cli {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Rerun even when an identical run left its outputs in place.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the tank process and write train.csv / test.csv.
    Synth,
    /// Flag features whose distribution shifts between train and test.
    Screen {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Fit the spectral plan and write band-energy datasets.
    Freq {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Fit a detector on the training set minus its validation tail.
    Fit {
        #[arg(value_enum)]
        kind: KindArg,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Sequence length (window width for wpca).
        #[arg(long)]
        seq_len: Option<usize>,
        /// CNN depth.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// PCA components.
        #[arg(long)]
        components: Option<usize>,
    },
    /// Choose (tau, window) on the validation tail under the false-alarm budget.
    Tune {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Score the test set and write residuals and localized alerts.
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        tuned: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Compute detection metrics from a residual trace.
    Eval {
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Search for an evasive perturbation of the test set.
    Advatk {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        tuned: Option<PathBuf>,
    },
    /// Write plot-ready CSVs: loss curve, residual trace, spectrograms.
    Report {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        tuned: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Pca,
    Wpca,
    Uae,
    Cnn,
}

impl From<KindArg> for DetectorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Pca => DetectorKind::Pca,
            KindArg::Wpca => DetectorKind::Wpca,
            KindArg::Uae => DetectorKind::Uae,
            KindArg::Cnn => DetectorKind::Cnn,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Command::Fit {
        kind,
        seq_len,
        depth,
        epochs,
        components,
        ..
    } = &cli.command
    {
        let o = FitOverrides {
            seq_len: *seq_len,
            depth: *depth,
            epochs: *epochs,
            components: *components,
        };
        commands::apply_fit_overrides(&mut cfg, (*kind).into(), &o);
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    let ctx = Ctx {
        cfg,
        out: cli.out,
        force: cli.force,
    };
    match &cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Screen { train, test } => commands::screen_cmd(&ctx, train.as_deref(), test.as_deref()),
        Command::Freq { train, test } => commands::freq(&ctx, train.as_deref(), test.as_deref()),
        Command::Fit { train, .. } => commands::fit(&ctx, train.as_deref()),
        Command::Tune { model, train } => commands::tune_cmd(&ctx, model.as_deref(), train.as_deref()),
        Command::Detect {
            model,
            test,
            tuned,
            tau,
            window,
        } => {
            let th = Threshold {
                tuned: tuned.clone(),
                tau: *tau,
                window: *window,
            };
            commands::detect(&ctx, model.as_deref(), test.as_deref(), &th)
        }
        Command::Eval { residuals } => commands::eval(&ctx, residuals.as_deref()),
        Command::Advatk { model, test, tuned } => {
            commands::advatk(&ctx, model.as_deref(), test.as_deref(), tuned.as_deref())
        }
        Command::Report { model, test, tuned } => {
            commands::report(&ctx, model.as_deref(), test.as_deref(), tuned.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = e.hint() {
                eprintln!("hint: {h}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

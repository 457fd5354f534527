//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p physdetect --test acceptance`.
//! The water-network check runs only when both dataset paths are set.

mod common;

use std::io::Write;
use std::time::Instant;

use common::{gradient, oracle, scenario, Outcome};

/// Writes past the test harness's output capture so the report always shows.
fn say(line: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn report(name: &str, outcome: Option<Outcome>) -> bool {
    match outcome {
        Some(Ok(detail)) => {
            say(format!("PASS {name}: {detail}"));
            true
        }
        Some(Err(reason)) => {
            say(format!("FAIL {name}: {reason}"));
            false
        }
        None => {
            say(format!(
                "SKIP {name}: set {} and {} to run",
                scenario::BATADAL_TRAIN_ENV,
                scenario::BATADAL_TEST_ENV
            ));
            true
        }
    }
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Option<Outcome>); 10] = [
        ("gradient master check", || Some(gradient::master_check())),
        ("ks_star oracle", || Some(oracle::ks_star_oracle())),
        ("pca oracle", || Some(oracle::pca_oracle())),
        ("dft oracle", || Some(oracle::dft_oracle())),
        ("scoring semantics", || Some(oracle::scoring_semantics())),
        ("composite score identities", || Some(oracle::batadal_identities())),
        ("synthetic end-to-end", || Some(scenario::synthetic_end_to_end())),
        ("frequency-mode detection", || Some(scenario::frequency_mode())),
        (
            "adversarial reproduction",
            || Some(scenario::adversarial_reproduction()),
        ),
        ("water-network dataset", scenario::batadal_dataset),
    ];
    let start = Instant::now();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(name, check)| !report(name, check()))
        .map(|(name, _)| *name)
        .collect();
    say(format!("acceptance finished in {:.1?}", start.elapsed()));
    assert!(failed.is_empty(), "failed: {failed:?}");
}

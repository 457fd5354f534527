//! Oracle equivalences and property suites for the numeric building blocks.

mod common;

use common::oracle;

fn pass(outcome: common::Outcome) {
    println!("{}", outcome.unwrap_or_else(|e| panic!("{e}")));
}

#[test]
fn ks_star_matches_trapezoid_oracle() {
    pass(oracle::ks_star_oracle());
}

#[test]
fn pca_matches_eigen_oracle() {
    pass(oracle::pca_oracle());
}

#[test]
fn dft_matches_naive_summation() {
    pass(oracle::dft_oracle());
}

#[test]
fn alert_scoring_matches_enumeration() {
    pass(oracle::scoring_semantics());
}

#[test]
fn composite_score_identities() {
    pass(oracle::batadal_identities());
}

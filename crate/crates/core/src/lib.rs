//! Detection of attacks on industrial control systems from process
//! telemetry: data handling, feature screening, reconstruction and
//! forecasting detectors, residual scoring, evaluation, adversarial
//! concealment and a synthetic water process.

pub mod adversarial;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod freq;
pub mod neural;
pub mod pca;
pub mod scoring;
pub mod screen;
pub mod synth;

pub use error::{Error, Result};

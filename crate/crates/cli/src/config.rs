//! Run configuration: one TOML file covering every pipeline stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use physdetect::adversarial::{AdversarialConfig, Comparison};
use physdetect::data::{CsvSchema, SubsampleMethod};
use physdetect::detector::{DetectorKind, DetectorSpec};
use physdetect::freq::FreqConfig;
use physdetect::scoring::Scheme;
use physdetect::screen::ScreenMode;
use physdetect::synth::{AttackScript, ProcessConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub screen: ScreenConfig,
    pub domain: Domain,
    pub freq: FreqConfig,
    pub detector: DetectorSpec,
    pub tuning: TuningConfig,
    pub eval: EvalConfig,
    pub adversarial: AdversarialSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            screen: ScreenConfig::default(),
            domain: Domain::Time,
            freq: FreqConfig::default(),
            detector: default_detector(),
            tuning: TuningConfig::default(),
            eval: EvalConfig::default(),
            adversarial: AdversarialSection::default(),
        }
    }
}

fn default_detector() -> DetectorSpec {
    let mut d = DetectorSpec::new(DetectorKind::Uae);
    d.scheme = Scheme::Zscore;
    d.train.max_epochs = 30;
    d.train.target_train_error = 1e-4;
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Attack-free training CSV; defaults to `train.csv` in the output directory.
    pub train: Option<PathBuf>,
    /// Labeled test CSV; defaults to `test.csv` in the output directory.
    pub test: Option<PathBuf>,
    pub schema: CsvSchemaConfig,
    /// Features to model; empty keeps all.
    pub features: Vec<String>,
    /// Keep every k-th record (or average blocks of k).
    pub subsample: usize,
    pub subsample_method: SubsampleMethod,
    /// Physical valid ranges in raw units, overriding observed extremes.
    pub valid_ranges: BTreeMap<String, (f64, f64)>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            schema: CsvSchemaConfig::default(),
            features: Vec::new(),
            subsample: 1,
            subsample_method: SubsampleMethod::Decimate,
            valid_ranges: BTreeMap::new(),
        }
    }
}

/// Serializable mirror of [`CsvSchema`] with stable key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchemaConfig {
    pub timestamp: String,
    pub label: Option<String>,
    pub exclude: Vec<String>,
    pub binary: Vec<String>,
    pub continuous: Vec<String>,
    pub timestamp_format: Option<String>,
}

impl Default for CsvSchemaConfig {
    fn default() -> Self {
        let s = CsvSchema::default();
        Self {
            timestamp: s.timestamp,
            label: s.label,
            exclude: Vec::new(),
            binary: Vec::new(),
            continuous: Vec::new(),
            timestamp_format: None,
        }
    }
}

impl CsvSchemaConfig {
    pub fn to_schema(&self, with_label: bool) -> CsvSchema {
        use physdetect::data::FeatureKind;
        let mut kinds = std::collections::HashMap::new();
        for b in &self.binary {
            kinds.insert(b.clone(), FeatureKind::Binary);
        }
        for c in &self.continuous {
            kinds.insert(c.clone(), FeatureKind::Continuous);
        }
        CsvSchema {
            timestamp: self.timestamp.clone(),
            label: if with_label { self.label.clone() } else { None },
            exclude: self.exclude.clone(),
            kinds,
            timestamp_format: self.timestamp_format.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub process: ProcessConfig,
    /// Attacks on the test segment; `None` uses the built-in script.
    pub script: Option<AttackScript>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            process: ProcessConfig::default(),
            script: None,
        }
    }
}

impl SynthConfig {
    pub fn attacks(&self) -> AttackScript {
        self.script.clone().unwrap_or_else(AttackScript::default_test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub threshold: f64,
    pub mode: ScreenMode,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            mode: ScreenMode::TrainVsTest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Time,
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    pub windows: Vec<usize>,
    pub fp_max: usize,
    /// Trailing share of the training records held out for tuning.
    pub validation_fraction: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            tau_min: 0.2,
            tau_max: 6.0,
            tau_step: 0.1,
            windows: vec![1, 2, 3, 5, 8, 12, 20, 30],
            fp_max: 1,
            validation_fraction: 0.2,
        }
    }
}

impl TuningConfig {
    pub fn tau_grid(&self) -> CliResult<Vec<f64>> {
        if !(self.tau_step > 0.0) || !(self.tau_max >= self.tau_min) || !self.tau_max.is_finite() {
            return Err(CliError::Config(
                "tuning needs tau_step > 0 and finite tau_min <= tau_max".into(),
            ));
        }
        let n = ((self.tau_max - self.tau_min) / self.tau_step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| ((self.tau_min + i as f64 * self.tau_step) * 1e9).round() / 1e9)
            .collect())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.tau_grid()?;
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(CliError::Config("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Weight of the time-to-detection term in the composite score.
    pub gamma: f64,
    /// Features listed per alert in `alerts.csv`.
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { gamma: 0.5, top_k: 3 }
    }
}

/// Search settings plus the attacker's physical objective in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialSection {
    pub search: AdversarialConfig,
    /// Take τ from the tuned threshold instead of `search.tau`.
    pub use_tuned_tau: bool,
    pub intent: Option<IntentConfig>,
}

impl Default for AdversarialSection {
    fn default() -> Self {
        Self {
            search: AdversarialConfig::default(),
            use_tuned_tau: true,
            intent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentConfig {
    pub feature: String,
    pub start: usize,
    pub end: usize,
    pub comparison: Comparison,
    pub value: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies `--seed` to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.process.seed = seed;
        self.detector.train.seed = seed;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        self.tuning.validate()?;
        self.synth.process.validate()?;
        self.synth.attacks().validate(&self.synth.process)?;
        self.adversarial.search.validate()?;
        if self.data.subsample == 0 {
            return Err(CliError::Config("data.subsample must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.gamma) {
            return Err(CliError::Config("eval.gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Hex SHA-256 over labeled byte strings.
pub fn digest<'a>(parts: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> String {
    let mut h = Sha256::new();
    for (label, bytes) in parts {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[tuning]\nfp_maxx = 2").is_err());
        assert!(RunConfig::parse("[detector]\nkind = \"uae\"\n[detector.uae]\nlayers = 2").is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c =
            RunConfig::parse("seed = 3\n[detector]\nkind = \"cnn\"\n[detector.cnn]\nseq_len = 18\ndepth = 8").unwrap();
        assert_eq!(c.detector.kind, DetectorKind::Cnn);
        assert_eq!(c.detector.cnn.depth, 8);
        assert_eq!(c.tuning, TuningConfig::default());
    }

    #[test]
    fn tau_grid_is_inclusive() {
        let t = TuningConfig {
            tau_min: 1.0,
            tau_max: 2.0,
            tau_step: 0.25,
            ..Default::default()
        };
        assert_eq!(t.tau_grid().unwrap(), vec![1.0, 1.25, 1.5, 1.75, 2.0]);
    }

    #[test]
    fn digest_separates_parts() {
        assert_ne!(digest([("a", b"bc".as_slice())]), digest([("ab", b"c".as_slice())]));
    }
}

//! Uniform front end over the four detector families: fitting, per-record
//! prediction and residual scoring on normalized datasets.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{make_ae_sequences, make_sequences, normalize, Anchors, SequenceBatch, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::neural::{
    predict, train, Activation, CnnConfig, CnnModel, ModelFile, NeuralModel, SequenceModel, TrainConfig, TrainReport,
    UaeConfig, UaeModel,
};
use crate::pca::{fit_pca, fit_windowed, pca_reconstruct, windowed_reconstruct, PcaModel, WindowedPcaModel};
use crate::scoring::{fit_stats, overlap_average, ResidualSeries, Scheme, TrainStats};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSpec {
    /// Defaults to half the modeled dimensions.
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WpcaSpec {
    pub width: usize,
    pub overlapping: bool,
    pub components: Option<usize>,
}

impl Default for WpcaSpec {
    fn default() -> Self {
        Self {
            width: 7,
            overlapping: true,
            components: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UaeSpec {
    pub seq_len: usize,
    pub inflation_factor: usize,
    pub code_ratio: f64,
    pub activation: Activation,
    pub noise_std: f64,
    /// Append first differences of every feature as extra input channels.
    pub enrichment: bool,
}

impl Default for UaeSpec {
    fn default() -> Self {
        Self {
            seq_len: 4,
            inflation_factor: 3,
            code_ratio: 0.5,
            activation: Activation::Tanh,
            noise_std: 0.0,
            enrichment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSpec {
    pub seq_len: usize,
    pub depth: usize,
    pub filters: usize,
    pub kernel_width: usize,
    pub pool_every: usize,
    pub out_len: usize,
    pub horizon: usize,
    pub enrichment: bool,
}

impl Default for CnnSpec {
    fn default() -> Self {
        let c = CnnConfig::new(1);
        Self {
            seq_len: c.seq_len,
            depth: c.depth,
            filters: c.filters,
            kernel_width: c.kernel_width,
            pool_every: c.pool_every,
            out_len: c.out_len,
            horizon: c.horizon,
            enrichment: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Pca,
    Wpca,
    Uae,
    Cnn,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Self::Pca),
            "wpca" => Ok(Self::Wpca),
            "uae" => Ok(Self::Uae),
            "cnn" => Ok(Self::Cnn),
            other => Err(Error::InvalidParameter(format!(
                "unknown detector `{other}` (expected pca, wpca, uae or cnn)"
            ))),
        }
    }
}

/// Hyperparameters for every family; `kind` picks the one to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default)]
    pub pca: PcaSpec,
    #[serde(default)]
    pub wpca: WpcaSpec,
    #[serde(default)]
    pub uae: UaeSpec,
    #[serde(default)]
    pub cnn: CnnSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub scheme: Scheme,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            pca: PcaSpec::default(),
            wpca: WpcaSpec::default(),
            uae: UaeSpec::default(),
            cnn: CnnSpec::default(),
            train: TrainConfig::default(),
            scheme: Scheme::default(),
        }
    }
}

/// A fitted model of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum DetectorModel {
    Pca(PcaModel),
    Wpca(WindowedPcaModel),
    Neural {
        #[serde(with = "neural_serde")]
        model: NeuralModel,
        enrichment: bool,
    },
}

mod neural_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &NeuralModel, s: S) -> std::result::Result<S::Ok, S::Error> {
        m.to_file().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<NeuralModel, D::Error> {
        let file = ModelFile::deserialize(d)?;
        NeuralModel::from_file(file).map_err(serde::de::Error::custom)
    }
}

/// `[x | Δx]` with a zero first difference row.
pub fn enrich(x: ArrayView2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros(x.dim());
    for i in 1..x.nrows() {
        let delta = &x.row(i) - &x.row(i - 1);
        d.row_mut(i).assign(&delta);
    }
    concatenate(Axis(1), &[x, d.view()]).expect("same row count")
}

/// Training windows for a neural model; targets exclude enrichment columns.
pub fn neural_batch(
    model: &dyn SequenceModel,
    x: ArrayView2<f64>,
    enrichment: bool,
    stride: usize,
) -> Result<SequenceBatch> {
    let f = x.ncols();
    let input = if enrichment { enrich(x) } else { x.to_owned() };
    let mut batch = if model.is_autoencoder() {
        make_ae_sequences(input.view(), model.input_len(), stride)?
    } else {
        make_sequences(
            input.view(),
            model.input_len(),
            model.output_len(),
            model.horizon(),
            stride,
        )?
    };
    if enrichment && !model.is_autoencoder() {
        batch.targets = batch.targets.slice(s![.., .., ..f]).to_owned();
    }
    Ok(batch)
}

/// Fits a detector on a normalized training matrix.
pub fn fit(spec: &DetectorSpec, x: ArrayView2<f64>) -> Result<(DetectorModel, Option<TrainReport>)> {
    let f = x.ncols();
    if f == 0 {
        return Err(Error::InvalidParameter("no features to model".into()));
    }
    match spec.kind {
        DetectorKind::Pca => {
            let c = spec.pca.components.unwrap_or_else(|| crate::pca::default_components(f));
            Ok((DetectorModel::Pca(fit_pca(x, c)?), None))
        }
        DetectorKind::Wpca => {
            let w = &spec.wpca;
            Ok((
                DetectorModel::Wpca(fit_windowed(x, w.width, w.overlapping, w.components)?),
                None,
            ))
        }
        DetectorKind::Uae => {
            let u = &spec.uae;
            let fin = if u.enrichment { 2 * f } else { f };
            let cfg = UaeConfig {
                n_features: fin,
                seq_len: u.seq_len,
                inflation_factor: u.inflation_factor,
                code_ratio: u.code_ratio,
                activation: u.activation,
                noise_std: u.noise_std,
            };
            let mut model = UaeModel::new(cfg, spec.train.seed)?;
            let batch = neural_batch(&model, x, u.enrichment, 1)?;
            let report = train(&mut model, &batch, &spec.train)?;
            Ok((
                DetectorModel::Neural {
                    model: NeuralModel::Uae(model),
                    enrichment: u.enrichment,
                },
                Some(report),
            ))
        }
        DetectorKind::Cnn => {
            let c = &spec.cnn;
            let cfg = CnnConfig {
                in_features: if c.enrichment { 2 * f } else { f },
                out_features: f,
                seq_len: c.seq_len,
                depth: c.depth,
                filters: c.filters,
                kernel_width: c.kernel_width,
                pool_every: c.pool_every,
                out_len: c.out_len,
                horizon: c.horizon,
            };
            let mut model = CnnModel::new(cfg, spec.train.seed)?;
            let batch = neural_batch(&model, x, c.enrichment, 1)?;
            let report = train(&mut model, &batch, &spec.train)?;
            Ok((
                DetectorModel::Neural {
                    model: NeuralModel::Cnn(model),
                    enrichment: c.enrichment,
                },
                Some(report),
            ))
        }
    }
}

impl DetectorModel {
    pub fn n_features(&self) -> usize {
        match self {
            DetectorModel::Pca(m) => m.n_features(),
            DetectorModel::Wpca(m) => m.n_features(),
            DetectorModel::Neural { model, enrichment } => {
                let fin = model.as_model().in_features();
                if *enrichment {
                    fin / 2
                } else {
                    fin
                }
            }
        }
    }

    /// Per-record prediction `ŷ` and the mask of records any prediction covers.
    pub fn predict_series(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<bool>)> {
        if x.ncols() != self.n_features() {
            return Err(Error::shape(format!("{} features", self.n_features()), x.ncols()));
        }
        let t = x.nrows();
        match self {
            DetectorModel::Pca(m) => Ok((pca_reconstruct(m, x)?, vec![true; t])),
            DetectorModel::Wpca(m) => Ok((windowed_reconstruct(m, x)?, vec![true; t])),
            DetectorModel::Neural { model, enrichment } => {
                let m = model.as_model();
                let batch = neural_batch(m, x, *enrichment, 1)?;
                let pred = predict(m, batch.inputs.view())?;
                let pred = pred.slice(s![.., .., ..x.ncols()]);
                let starts: Vec<usize> = (0..batch.len()).map(|i| batch.target_start(i)).collect();
                overlap_average(pred, &starts, t)
            }
        }
    }
}

/// Everything needed to score new data: features, anchors, model and
/// training-residual statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDetector {
    pub format_version: u32,
    pub features: Vec<String>,
    pub anchors: Anchors,
    pub model: DetectorModel,
    pub stats: TrainStats,
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

pub const DETECTOR_FORMAT_VERSION: u32 = 1;

impl FittedDetector {
    /// Fits on the raw (unnormalized) training set.
    pub fn fit(spec: &DetectorSpec, train_raw: &TimeSeriesDataset) -> Result<Self> {
        let norm = normalize(train_raw, None)?;
        let (model, report) = fit(spec, norm.features().view())?;
        let (y_hat, covered) = model.predict_series(norm.features().view())?;
        let raw = crate::scoring::residuals(norm.features().view(), y_hat.view())?;
        let stats = fit_stats(raw.view(), spec.scheme, Some(&covered))?;
        Ok(Self {
            format_version: DETECTOR_FORMAT_VERSION,
            features: train_raw.feature_names(),
            anchors: crate::data::anchors_of(&norm),
            model,
            stats,
            loss_history: report.map(|r| r.losses).unwrap_or_default(),
        })
    }

    /// Selects and normalizes a raw dataset into the detector's space.
    pub fn prepare(&self, raw: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        normalize(&raw.select(&self.features)?, Some(&self.anchors))
    }

    /// Residuals of a raw dataset.
    pub fn score(&self, raw: &TimeSeriesDataset) -> Result<ResidualSeries> {
        self.score_normalized(&self.prepare(raw)?)
    }

    pub fn score_normalized(&self, norm: &TimeSeriesDataset) -> Result<ResidualSeries> {
        let (y_hat, covered) = self.model.predict_series(norm.features().view())?;
        ResidualSeries::new(norm.features().view(), y_hat.view(), covered, self.stats.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text)?;
        if d.format_version != DETECTOR_FORMAT_VERSION {
            return Err(Error::FormatVersion(d.format_version));
        }
        if d.anchors.len() != d.features.len() || d.model.n_features() != d.features.len() {
            return Err(Error::shape(
                format!("{} features", d.features.len()),
                format!("{} anchors, model over {}", d.anchors.len(), d.model.n_features()),
            ));
        }
        if d.stats.n_features() != d.features.len() {
            return Err(Error::shape(
                format!("{} statistics", d.features.len()),
                d.stats.n_features(),
            ));
        }
        Ok(d)
    }
}

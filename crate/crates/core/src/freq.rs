//! Frequency-domain features: each signal is described by its energy in
//! the few spectral bands that dominate it.
//!
//! A [`FrequencyPlan`] is fitted on training data (dominant period, STFT
//! window and selected bands per feature) and then applied unchanged to
//! any dataset, so train and test share one feature space.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMeta, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Equal-width bands the one-sided spectrum is split into.
pub const ALL_FREQ_BINS: usize = 10;

/// Non-DC energy at or below this fraction of the total is treated as none.
pub const DC_TOLERANCE: f64 = 1e-12;

/// Forward DFT, `X_k = Σ x_n e^{-2πikn/N}`.
pub fn dft(signal: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

/// `|X_k| / N` for `k < N/2`.
pub fn half_magnitudes(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    dft(signal).iter().take(n / 2).map(|c| c.norm() / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    /// Hz, given the sampling period in seconds.
    pub fundamental_freq: f64,
    pub period_samples: f64,
}

/// Dominant non-constant frequency of a signal and its period in samples.
pub fn frequency_analysis(signal: &[f64], sampling_period: f64) -> Result<SpectralProfile> {
    let n = signal.len();
    if n < 4 {
        return Err(Error::InvalidParameter(format!(
            "frequency analysis needs at least 4 samples, got {n}"
        )));
    }
    if !(sampling_period > 0.0 && sampling_period.is_finite()) {
        return Err(Error::InvalidParameter("sampling period must be positive".into()));
    }
    let mags = half_magnitudes(signal);
    let total: f64 = mags.iter().map(|m| m * m).sum();
    let non_dc: f64 = mags[1..].iter().map(|m| m * m).sum();
    if non_dc <= DC_TOLERANCE * total || non_dc == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let mut order: Vec<usize> = (0..mags.len()).collect();
    // stable: equal magnitudes keep the lower bin first
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]));
    let k = if order[0] == 0 { order[1] } else { order[0] };
    let fundamental_freq = k as f64 / (n as f64 * sampling_period);
    Ok(SpectralProfile {
        fundamental_freq,
        period_samples: (1.0 / fundamental_freq) / sampling_period,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Rectangular,
    Hann,
}

impl Taper {
    fn weights(self, w: usize) -> Vec<f64> {
        match self {
            Taper::Rectangular => vec![1.0; w],
            Taper::Hann => (0..w)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / w as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreqConfig {
    /// STFT window length in dominant periods.
    pub ratio: f64,
    pub step: usize,
    /// Bands kept per feature.
    pub b_num: usize,
    pub taper: Taper,
}

impl Default for FreqConfig {
    fn default() -> Self {
        Self {
            ratio: 1.5,
            step: 2,
            b_num: 3,
            taper: Taper::Rectangular,
        }
    }
}

impl FreqConfig {
    fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return Err(Error::InvalidParameter("ratio must be positive".into()));
        }
        if self.step == 0 {
            return Err(Error::InvalidParameter("STFT step must be >= 1".into()));
        }
        if self.b_num == 0 || self.b_num > ALL_FREQ_BINS {
            return Err(Error::InvalidParameter(format!(
                "b_num must be in 1..={ALL_FREQ_BINS}, got {}",
                self.b_num
            )));
        }
        Ok(())
    }
}

/// Window length for a period, rounded to the nearest integer and at least 2.
pub fn stft_window(period_samples: f64, ratio: f64) -> usize {
    ((period_samples * ratio).round() as usize).max(2)
}

/// Band of one-sided bin `k` for window length `w`.
fn band_of(k: usize, w: usize) -> usize {
    (2 * ALL_FREQ_BINS * k / w).min(ALL_FREQ_BINS - 1)
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    taper: Vec<f64>,
    window: usize,
}

impl Stft {
    fn new(window: usize, taper: Taper) -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(window),
            taper: taper.weights(window),
            window,
        }
    }

    /// One-sided power spectrum whose sum equals the tapered segment energy.
    fn power(&self, seg: &[f64]) -> Vec<f64> {
        let w = self.window;
        let mut buf: Vec<Complex<f64>> = seg
            .iter()
            .zip(&self.taper)
            .map(|(x, h)| Complex::new(x * h, 0.0))
            .collect();
        self.fft.process(&mut buf);
        (0..=w / 2)
            .map(|k| {
                let p = buf[k].norm_sqr() / w as f64;
                let mirrored = k != 0 && !(w % 2 == 0 && k == w / 2);
                if mirrored {
                    2.0 * p
                } else {
                    p
                }
            })
            .collect()
    }

    fn bands(&self, seg: &[f64]) -> [f64; ALL_FREQ_BINS] {
        let mut out = [0.0; ALL_FREQ_BINS];
        for (k, p) in self.power(seg).into_iter().enumerate() {
            out[band_of(k, self.window)] += p;
        }
        out
    }
}

/// One-sided power spectrum of one segment under `taper`.
pub fn segment_power(seg: &[f64], taper: Taper) -> Vec<f64> {
    Stft::new(seg.len(), taper).power(seg)
}

/// Energy per band for every window: `(n_windows, ALL_FREQ_BINS)`.
pub fn band_energies(signal: &[f64], window: usize, step: usize, taper: Taper) -> Result<Array2<f64>> {
    if window > signal.len() {
        return Err(Error::InvalidParameter(format!(
            "STFT window {window} longer than signal of {}",
            signal.len()
        )));
    }
    if window < 2 || step == 0 {
        return Err(Error::InvalidParameter("STFT needs window >= 2 and step >= 1".into()));
    }
    let stft = Stft::new(window, taper);
    let n = (signal.len() - window) / step + 1;
    let mut out = Array2::zeros((n, ALL_FREQ_BINS));
    for j in 0..n {
        let b = stft.bands(&signal[j * step..j * step + window]);
        for (k, v) in b.iter().enumerate() {
            out[[j, k]] = *v;
        }
    }
    Ok(out)
}

/// The `b_num` bands with the greatest total energy, in ascending band order.
/// Ties go to the lower band.
pub fn select_bands(energies: &Array2<f64>, b_num: usize) -> Vec<usize> {
    let totals: Vec<f64> = energies.columns().into_iter().map(|c| c.sum()).collect();
    let mut order: Vec<usize> = (0..totals.len()).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]));
    let mut chosen: Vec<usize> = order.into_iter().take(b_num).collect();
    chosen.sort_unstable();
    chosen
}

/// Spectral representation of a single signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralColumn {
    pub profile: SpectralProfile,
    /// `(n_windows, b_num)`, columns in `band_ids` order.
    pub band_energy: Array2<f64>,
    pub band_ids: Vec<usize>,
    pub stft_window: usize,
    pub stft_step: usize,
}

/// Analyses one signal and returns its dominant-band energies.
pub fn frequency_transform(signal: &[f64], sampling_period: f64, cfg: &FreqConfig) -> Result<SpectralColumn> {
    cfg.validate()?;
    let profile = frequency_analysis(signal, sampling_period)?;
    let window = stft_window(profile.period_samples, cfg.ratio);
    let all = band_energies(signal, window, cfg.step, cfg.taper)?;
    let band_ids = select_bands(&all, cfg.b_num);
    let band_energy = all.select(ndarray::Axis(1), &band_ids);
    Ok(SpectralColumn {
        profile,
        band_energy,
        band_ids,
        stft_window: window,
        stft_step: cfg.step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePlan {
    pub feature: String,
    pub profile: SpectralProfile,
    pub window: usize,
    pub bands: Vec<usize>,
}

/// Fitted per-feature spectral configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub config: FreqConfig,
    pub features: Vec<FeaturePlan>,
    /// Features without a usable dominant frequency, with the reason.
    pub excluded: Vec<(String, String)>,
}

impl FrequencyPlan {
    /// Longest window; every output row covers this many records.
    pub fn span(&self) -> usize {
        self.features.iter().map(|f| f.window).max().unwrap_or(2)
    }

    /// Number of output rows for a series of `t` records.
    pub fn n_rows(&self, t: usize) -> usize {
        let span = self.span();
        if t < span {
            0
        } else {
            (t - span) / self.config.step + 1
        }
    }

    /// Inclusive record range `[start, end]` covered by output row `j`.
    pub fn row_span(&self, j: usize) -> (usize, usize) {
        let end = self.span() - 1 + j * self.config.step;
        (end + 1 - self.span(), end)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| f.bands.iter().map(move |b| format!("{}/band{b}", f.feature)))
            .collect()
    }
}

/// Fits the plan on a (training) dataset.
pub fn fit_plan(train: &TimeSeriesDataset, cfg: &FreqConfig) -> Result<FrequencyPlan> {
    cfg.validate()?;
    let dt = train.step().unwrap_or(1.0);
    let mut features = Vec::new();
    let mut excluded = Vec::new();
    for (j, name) in train.feature_names().into_iter().enumerate() {
        let signal: Vec<f64> = train.features().column(j).to_vec();
        match frequency_transform(&signal, dt, cfg) {
            Ok(col) => features.push(FeaturePlan {
                feature: name,
                profile: col.profile,
                window: col.stft_window,
                bands: col.band_ids,
            }),
            Err(e @ (Error::DegenerateSpectrum | Error::InvalidParameter(_))) => {
                log::info!("feature {name} excluded from frequency mode: {e}");
                excluded.push((name, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FrequencyPlan {
        config: cfg.clone(),
        features,
        excluded,
    })
}

/// Applies a fitted plan. Every feature's window ends on the same record;
/// a row is labeled attack when any record of its span is.
pub fn apply_plan(plan: &FrequencyPlan, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
    let t = ds.len();
    let span = plan.span();
    if !plan.features.is_empty() && t < span {
        return Err(Error::InvalidParameter(format!(
            "series of {t} records is shorter than the STFT span {span}"
        )));
    }
    let rows = plan.n_rows(t);
    let names = plan.column_names();
    let mut out = Array2::zeros((rows, names.len()));
    let mut col = 0;
    for fp in &plan.features {
        let j = ds
            .feature_index(&fp.feature)
            .ok_or_else(|| Error::MissingColumn(fp.feature.clone()))?;
        let signal: Vec<f64> = ds.features().column(j).to_vec();
        let stft = Stft::new(fp.window, plan.config.taper);
        for r in 0..rows {
            let (_, end) = plan.row_span(r);
            let b = stft.bands(&signal[end + 1 - fp.window..=end]);
            for (i, &band) in fp.bands.iter().enumerate() {
                out[[r, col + i]] = b[band];
            }
        }
        col += fp.bands.len();
    }
    let timestamps: Vec<f64> = (0..rows).map(|r| ds.timestamps()[plan.row_span(r).1]).collect();
    let labels = ds.labels().map(|l| {
        (0..rows)
            .map(|r| {
                let (s, e) = plan.row_span(r);
                l[s..=e].iter().any(|&a| a)
            })
            .collect()
    });
    let mut meta = Vec::with_capacity(names.len());
    let mut c = 0;
    for fp in &plan.features {
        for _ in &fp.bands {
            let column = out.column(c);
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if rows == 0 { (0.0, 0.0) } else { (lo, hi) };
            let mut m = FeatureMeta::continuous(names[c].clone(), lo, hi);
            m.valid_range = (0.0, f64::INFINITY);
            m.source = Some(fp.feature.clone());
            meta.push(m);
            c += 1;
        }
    }
    TimeSeriesDataset::new(timestamps, out, labels, meta)
}

/// Fits on `ds` and transforms it.
pub fn transform_dataset(ds: &TimeSeriesDataset, cfg: &FreqConfig) -> Result<(TimeSeriesDataset, FrequencyPlan)> {
    let plan = fit_plan(ds, cfg)?;
    Ok((apply_plan(&plan, ds)?, plan))
}

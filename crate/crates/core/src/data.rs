//! Dataset representation, CSV ingestion/export, normalization,
//! subsampling and sequence windowing.
//!
//! [`TimeSeriesDataset`] is the currency passed between all other modules:
//! a `T x F` feature matrix with strictly increasing timestamps, optional
//! per-record attack labels and per-feature metadata.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
    Categorical,
}

/// Per-feature metadata: identity, kind and normalization anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
    /// Normalization anchors. For a dataset that has not been normalized
    /// these are the observed extremes.
    pub train_min: f64,
    pub train_max: f64,
    /// Physically valid range in the units the values are currently in.
    pub valid_range: (f64, f64),
    /// Set when normalization found `train_min == train_max`.
    #[serde(default)]
    pub degenerate: bool,
    /// Originating time-domain feature, for derived (e.g. spectral) columns.
    #[serde(default)]
    pub source: Option<String>,
}

impl FeatureMeta {
    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous,
            train_min: min,
            train_max: max,
            valid_range: (min, max),
            degenerate: false,
            source: None,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Binary,
            train_min: 0.0,
            train_max: 1.0,
            valid_range: (0.0, 1.0),
            degenerate: false,
            source: None,
        }
    }
}

/// Timestamped feature matrix with optional attack labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    timestamps: Vec<f64>,
    features: Array2<f64>,
    labels: Option<Vec<bool>>,
    meta: Vec<FeatureMeta>,
    skipped_rows: usize,
}

impl TimeSeriesDataset {
    /// Builds a dataset, checking every structural invariant.
    pub fn new(
        timestamps: Vec<f64>,
        features: Array2<f64>,
        labels: Option<Vec<bool>>,
        meta: Vec<FeatureMeta>,
    ) -> Result<Self> {
        let (t, f) = features.dim();
        if timestamps.len() != t {
            return Err(Error::shape(format!("{t} timestamps"), timestamps.len()));
        }
        if meta.len() != f {
            return Err(Error::shape(format!("{f} feature metas"), meta.len()));
        }
        if let Some(l) = &labels {
            if l.len() != t {
                return Err(Error::shape(format!("{t} labels"), l.len()));
            }
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotoneTimestamps {
                    index: i + 1,
                    prev: w[0],
                    next: w[1],
                });
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature matrix contains non-finite values".into(),
            ));
        }
        Ok(Self {
            timestamps,
            features,
            labels,
            meta,
            skipped_rows: 0,
        })
    }

    /// Dataset with unit-step timestamps `0, 1, ..` and inferred metadata.
    pub fn from_matrix(names: &[&str], features: Array2<f64>) -> Result<Self> {
        let t = features.nrows();
        let meta = infer_meta(
            &names.iter().map(|n| n.to_string()).collect::<Vec<_>>(),
            features.view(),
            &HashMap::new(),
        );
        Self::new((0..t).map(|i| i as f64).collect(), features, None, meta)
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape(format!("{} labels", self.len()), labels.len()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn meta(&self) -> &[FeatureMeta] {
        &self.meta
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    /// Rows rejected during ingestion.
    pub fn skipped_rows(&self) -> usize {
        self.skipped_rows
    }

    /// Most frequent spacing between consecutive timestamps. Skipped rows
    /// leave gaps, so the modal step rather than the first one is reported.
    pub fn step(&self) -> Option<f64> {
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for w in self.timestamps.windows(2) {
            *counts.entry((w[1] - w[0]).to_bits()).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(f64::from_bits(b.0).total_cmp(&f64::from_bits(a.0))))
            .map(|(bits, _)| f64::from_bits(bits))
    }

    /// Records `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            timestamps: self.timestamps[start..end].to_vec(),
            features: self.features.slice(s![start..end, ..]).to_owned(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            meta: self.meta.clone(),
            skipped_rows: 0,
        }
    }

    /// Keeps only the named features, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.feature_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            timestamps: self.timestamps.clone(),
            features: self.features.select(Axis(1), &idx),
            labels: self.labels.clone(),
            meta: idx.iter().map(|&i| self.meta[i].clone()).collect(),
            skipped_rows: self.skipped_rows,
        })
    }

    /// Replaces the feature matrix, keeping timestamps, labels and metadata.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::shape(
                format!("{:?}", self.features.dim()),
                format!("{:?}", features.dim()),
            ));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Writes the dataset in the ingestion CSV format.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.feature_names());
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (i, row) in self.features.outer_iter().enumerate() {
            record.clear();
            record.push(self.timestamps[i].to_string());
            record.extend(row.iter().map(|v| v.to_string()));
            if let Some(l) = &self.labels {
                record.push(if l[i] { "1" } else { "0" }.to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Column roles for [`ingest_csv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub timestamp: String,
    #[serde(default)]
    pub label: Option<String>,
    /// Columns ignored entirely.
    #[serde(default)]
    pub exclude: Vec<String>,
    /// Explicit feature kinds; unlisted features are inferred.
    #[serde(default)]
    pub kinds: HashMap<String, FeatureKind>,
    /// chrono format string for non-ISO timestamps.
    #[serde(default)]
    pub timestamp_format: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            label: Some("label".into()),
            exclude: Vec::new(),
            kinds: HashMap::new(),
            timestamp_format: None,
        }
    }
}

fn parse_timestamp(raw: &str, format: Option<&str>) -> Result<f64> {
    let raw = raw.trim();
    if let Some(fmt) = format {
        return chrono::NaiveDateTime::parse_from_str(raw, fmt)
            .map(|dt| dt.and_utc().timestamp_micros() as f64 / 1e6)
            .map_err(|_| Error::BadTimestamp(raw.to_string()));
    }
    if let Ok(v) = raw.parse::<f64>() {
        if v.is_finite() {
            return Ok(v);
        }
    }
    const ISO: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for fmt in ISO {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp_micros() as f64 / 1e6);
        }
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp_micros() as f64 / 1e6);
    }
    Err(Error::BadTimestamp(raw.to_string()))
}

fn parse_label(raw: &str) -> Result<bool> {
    let token: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    match token.to_ascii_lowercase().as_str() {
        // -999 marks unlabeled records in the public water-network files
        "normal" | "0" | "-999" => Ok(false),
        "attack" | "1" => Ok(true),
        _ => Err(Error::UnknownLabel(raw.to_string())),
    }
}

fn infer_meta(names: &[String], values: ArrayView2<f64>, kinds: &HashMap<String, FeatureKind>) -> Vec<FeatureMeta> {
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = values.column(j);
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            let (lo, hi) = if col.is_empty() { (0.0, 0.0) } else { (lo, hi) };
            let all_binary = !col.is_empty() && col.iter().all(|&v| v == 0.0 || v == 1.0);
            let kind = kinds.get(name).copied().unwrap_or(if all_binary {
                FeatureKind::Binary
            } else {
                FeatureKind::Continuous
            });
            match kind {
                FeatureKind::Binary => FeatureMeta::binary(name.clone()),
                _ => FeatureMeta {
                    kind,
                    ..FeatureMeta::continuous(name.clone(), lo, hi)
                },
            }
        })
        .collect()
}

/// Reads a CSV file with a header row into a dataset.
///
/// Rows with a wrong field count, an unparseable timestamp or a
/// non-finite feature value are skipped and counted; non-monotone
/// timestamps and unknown label tokens abort ingestion.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    let ts_col = header
        .iter()
        .position(|h| *h == schema.timestamp)
        .ok_or_else(|| Error::MissingColumn(schema.timestamp.clone()))?;
    let label_col = match &schema.label {
        Some(name) => header.iter().position(|h| h == name),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != ts_col && Some(i) != label_col && !schema.exclude.contains(&header[i]))
        .collect();
    let names: Vec<String> = feature_cols.iter().map(|&i| header[i].clone()).collect();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0usize;
    'rows: for record in rdr.records() {
        let record = match record {
            Ok(r) if r.len() == header.len() => r,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let Ok(ts) = parse_timestamp(&record[ts_col], schema.timestamp_format.as_deref()) else {
            skipped += 1;
            continue;
        };
        let start = values.len();
        for &c in &feature_cols {
            match record[c].parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    values.truncate(start);
                    skipped += 1;
                    continue 'rows;
                }
            }
        }
        if let Some(lc) = label_col {
            labels.push(parse_label(&record[lc])?);
        }
        timestamps.push(ts);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed rows");
    }
    let features =
        Array2::from_shape_vec((timestamps.len(), names.len()), values).expect("row-major buffer matches shape");
    let meta = infer_meta(&names, features.view(), &schema.kinds);
    let mut ds = TimeSeriesDataset::new(timestamps, features, label_col.map(|_| labels), meta)?;
    ds.skipped_rows = skipped;
    Ok(ds)
}

/// Per-feature `(min, max)` anchors for [`normalize`].
pub type Anchors = Vec<(f64, f64)>;

/// Anchors currently stored in the dataset metadata.
pub fn anchors_of(ds: &TimeSeriesDataset) -> Anchors {
    ds.meta.iter().map(|m| (m.train_min, m.train_max)).collect()
}

fn column_extremes(ds: &TimeSeriesDataset) -> Anchors {
    ds.features
        .columns()
        .into_iter()
        .map(|c| {
            c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
        })
        .collect()
}

/// Min-max scales every non-binary feature to the (0,1) range.
///
/// Without `anchors` the dataset's own extremes are used; with them (the
/// test-set case) the training extremes are applied and out-of-range
/// values map outside [0,1] unclipped. A feature whose anchors coincide
/// becomes constant 0 and is flagged degenerate.
pub fn normalize(ds: &TimeSeriesDataset, anchors: Option<&[(f64, f64)]>) -> Result<TimeSeriesDataset> {
    let own;
    let anchors = match anchors {
        Some(a) => {
            if a.len() != ds.n_features() {
                return Err(Error::shape(format!("{} anchors", ds.n_features()), a.len()));
            }
            a
        }
        None => {
            own = column_extremes(ds);
            &own
        }
    };
    let mut features = ds.features.clone();
    let mut meta = ds.meta.clone();
    for (j, ((lo, hi), m)) in anchors.iter().zip(meta.iter_mut()).enumerate() {
        if m.kind == FeatureKind::Binary {
            continue;
        }
        let (lo, hi) = (*lo, *hi);
        let mut col = features.column_mut(j);
        let scale = |v: f64| (v - lo) / (hi - lo);
        if hi > lo {
            col.mapv_inplace(scale);
            m.valid_range = (scale(m.valid_range.0), scale(m.valid_range.1));
            m.degenerate = false;
        } else {
            col.fill(0.0);
            m.valid_range = (0.0, 0.0);
            m.degenerate = true;
        }
        m.train_min = lo;
        m.train_max = hi;
    }
    Ok(TimeSeriesDataset {
        features,
        meta,
        ..ds.clone()
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMethod {
    #[default]
    Decimate,
    Mean,
}

/// Reduces the record rate by an integer factor `k`.
///
/// Labels are OR-ed over each block of `k` records for both methods.
pub fn subsample(ds: &TimeSeriesDataset, k: usize, method: SubsampleMethod) -> Result<TimeSeriesDataset> {
    if k == 0 {
        return Err(Error::InvalidParameter("subsample factor must be >= 1".into()));
    }
    if k == 1 {
        return Ok(ds.clone());
    }
    let t = ds.len();
    let blocks: Vec<(usize, usize)> = (0..t).step_by(k).map(|s| (s, (s + k).min(t))).collect();
    let f = ds.n_features();
    let mut features = Array2::zeros((blocks.len(), f));
    for (b, &(s, e)) in blocks.iter().enumerate() {
        match method {
            SubsampleMethod::Decimate => features.row_mut(b).assign(&ds.features.row(s)),
            SubsampleMethod::Mean => features
                .row_mut(b)
                .assign(&ds.features.slice(s![s..e, ..]).mean_axis(Axis(0)).unwrap()),
        }
    }
    Ok(TimeSeriesDataset {
        timestamps: blocks.iter().map(|&(s, _)| ds.timestamps[s]).collect(),
        features,
        labels: ds
            .labels
            .as_ref()
            .map(|l| blocks.iter().map(|&(s, e)| l[s..e].iter().any(|&x| x)).collect()),
        meta: ds.meta.clone(),
        skipped_rows: ds.skipped_rows,
    })
}

/// Input/target windows cut from a series.
///
/// Item `i` reads records `starts[i] .. starts[i] + input_len` and, in
/// forecasting mode, targets `starts[i] + input_len + horizon ..` for
/// `output_len` records. In autoencoder mode targets equal inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Array3<f64>,
    pub targets: Array3<f64>,
    pub horizon: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub starts: Vec<usize>,
    pub autoencoder: bool,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// First record index predicted by item `i`.
    pub fn target_start(&self, i: usize) -> usize {
        if self.autoencoder {
            self.starts[i]
        } else {
            self.starts[i] + self.input_len + self.horizon
        }
    }
}

/// Window start offsets for a series of length `t`.
pub fn window_starts(t: usize, span: usize, stride: usize) -> Vec<usize> {
    if span == 0 || t < span {
        return Vec::new();
    }
    (0..=t - span).step_by(stride.max(1)).collect()
}

/// Cuts forecasting windows: `l` inputs predict `m` records `h` steps ahead.
pub fn make_sequences(x: ArrayView2<f64>, l: usize, m: usize, h: usize, stride: usize) -> Result<SequenceBatch> {
    if l == 0 || m == 0 || stride == 0 {
        return Err(Error::InvalidParameter("l, m and stride must be >= 1".into()));
    }
    let span = l + h + m;
    let starts = window_starts(x.nrows(), span, stride);
    if starts.is_empty() {
        log::warn!("series of {} records is shorter than one window ({span})", x.nrows());
    }
    let f = x.ncols();
    let mut inputs = Array3::zeros((starts.len(), l, f));
    let mut targets = Array3::zeros((starts.len(), m, f));
    for (i, &s) in starts.iter().enumerate() {
        inputs.index_axis_mut(Axis(0), i).assign(&x.slice(s![s..s + l, ..]));
        targets
            .index_axis_mut(Axis(0), i)
            .assign(&x.slice(s![s + l + h..s + span, ..]));
    }
    Ok(SequenceBatch {
        inputs,
        targets,
        horizon: h,
        input_len: l,
        output_len: m,
        starts,
        autoencoder: false,
    })
}

/// Cuts autoencoder windows of length `l` whose targets are the inputs.
pub fn make_ae_sequences(x: ArrayView2<f64>, l: usize, stride: usize) -> Result<SequenceBatch> {
    if l == 0 || stride == 0 {
        return Err(Error::InvalidParameter("l and stride must be >= 1".into()));
    }
    let starts = window_starts(x.nrows(), l, stride);
    if starts.is_empty() {
        log::warn!("series of {} records is shorter than one window ({l})", x.nrows());
    }
    let mut inputs = Array3::zeros((starts.len(), l, x.ncols()));
    for (i, &s) in starts.iter().enumerate() {
        inputs.index_axis_mut(Axis(0), i).assign(&x.slice(s![s..s + l, ..]));
    }
    Ok(SequenceBatch {
        targets: inputs.clone(),
        inputs,
        horizon: 0,
        input_len: l,
        output_len: l,
        starts,
        autoencoder: true,
    })
}

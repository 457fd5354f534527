//! PCA-Reconstruction and windowed (dynamical) PCA detectors.
//!
//! Both detectors project onto the top principal components and map the
//! projection back into the original feature space, so their output can be
//! scored with the same residual machinery as the neural predictors.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted principal-component basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `C x F`, orthonormal rows ordered by descending explained variance.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }
}

/// Half of the modeled dimensions, at least one.
pub fn default_components(dim: usize) -> usize {
    (dim / 2).max(1)
}

/// Fits PCA via SVD of the column-centered training matrix.
pub fn fit_pca(train: ArrayView2<f64>, n_components: usize) -> Result<PcaModel> {
    let (t, f) = train.dim();
    if n_components == 0 || n_components > f {
        return Err(Error::InvalidParameter(format!(
            "n_components must be in 1..={f}, got {n_components}"
        )));
    }
    if t <= n_components {
        return Err(Error::InvalidParameter(format!(
            "PCA needs more rows ({t}) than components ({n_components})"
        )));
    }
    let mean = train.mean_axis(Axis(0)).expect("non-empty");
    let centered = &train - &mean;
    let m = DMatrix::from_row_iterator(t, f, centered.iter().copied());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let mut components = Array2::zeros((n_components, f));
    let mut explained_variance = Vec::with_capacity(n_components);
    for (c, &k) in order.iter().take(n_components).enumerate() {
        let row = v_t.row(k);
        // deterministic sign: largest-magnitude entry positive
        let pivot = (0..f).fold(0, |best, j| if row[j].abs() > row[best].abs() { j } else { best });
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..f {
            components[[c, j]] = sign * row[j];
        }
        explained_variance.push(svd.singular_values[k].powi(2) / (t - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Projects onto the component span and back: `(x - mean) C^T C + mean`.
pub fn pca_reconstruct(model: &PcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.n_features() {
        return Err(Error::shape(format!("{} columns", model.n_features()), x.ncols()));
    }
    let centered = &x - &model.mean;
    let scores = centered.dot(&model.components.t());
    Ok(scores.dot(&model.components) + &model.mean)
}

/// PCA fitted on flattened windows of `width` consecutive records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedPcaModel {
    pub inner: PcaModel,
    pub width: usize,
    pub overlapping: bool,
}

impl WindowedPcaModel {
    pub fn n_features(&self) -> usize {
        self.inner.n_features() / self.width
    }
}

/// Flattens windows starting at `starts` into rows of `width * F` values,
/// time-major within each row.
fn flatten_windows(x: ArrayView2<f64>, width: usize, starts: &[usize]) -> Array2<f64> {
    let f = x.ncols();
    let mut out = Array2::zeros((starts.len(), width * f));
    for (r, &s) in starts.iter().enumerate() {
        for k in 0..width {
            for j in 0..f {
                out[[r, k * f + j]] = x[[s + k, j]];
            }
        }
    }
    out
}

fn stride(width: usize, overlapping: bool) -> usize {
    if overlapping {
        1
    } else {
        width
    }
}

pub fn fit_windowed(
    train: ArrayView2<f64>,
    width: usize,
    overlapping: bool,
    n_components: Option<usize>,
) -> Result<WindowedPcaModel> {
    if width == 0 {
        return Err(Error::InvalidParameter("window width must be >= 1".into()));
    }
    if train.nrows() < width {
        return Err(Error::InvalidParameter(format!(
            "{} training records are fewer than the window width {width}",
            train.nrows()
        )));
    }
    let starts = crate::data::window_starts(train.nrows(), width, stride(width, overlapping));
    let flat = flatten_windows(train, width, &starts);
    let dim = width * train.ncols();
    let inner = fit_pca(flat.view(), n_components.unwrap_or_else(|| default_components(dim)))?;
    Ok(WindowedPcaModel {
        inner,
        width,
        overlapping,
    })
}

/// Reconstructs a series window by window.
///
/// Overlapping models average (uniformly) every window covering a record;
/// non-overlapping models tile. A trailing remainder shorter than a window
/// is padded by repeating the last record, reconstructed, then truncated.
pub fn windowed_reconstruct(model: &WindowedPcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (t, f) = x.dim();
    if f != model.n_features() {
        return Err(Error::shape(format!("{} columns", model.n_features()), f));
    }
    let w = model.width;
    if t == 0 {
        return Ok(Array2::zeros((0, f)));
    }
    // pad so that the stride pattern covers every record
    let s = stride(w, model.overlapping);
    let padded_len = if t < w { w } else { t + (s - (t - w) % s) % s };
    let mut padded = Array2::zeros((padded_len, f));
    for i in 0..padded_len {
        padded.row_mut(i).assign(&x.row(i.min(t - 1)));
    }
    let starts = crate::data::window_starts(padded_len, w, s);
    let flat = flatten_windows(padded.view(), w, &starts);
    let rec = pca_reconstruct(&model.inner, flat.view())?;
    let mut sum = Array2::<f64>::zeros((padded_len, f));
    let mut count = vec![0usize; padded_len];
    for (r, &st) in starts.iter().enumerate() {
        for k in 0..w {
            count[st + k] += 1;
            for j in 0..f {
                sum[[st + k, j]] += rec[[r, k * f + j]];
            }
        }
    }
    let mut out = Array2::zeros((t, f));
    for i in 0..t {
        for j in 0..f {
            out[[i, j]] = sum[[i, j]] / count[i] as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(t: usize, f: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, f), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_one_data_component() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| (i as f64 - 7.0) * if j == 0 { 1.0 } else { 2.0 });
        let m = fit_pca(x.view(), 1).unwrap();
        let s5 = 5f64.sqrt();
        assert!((m.components[[0, 0]] - 1.0 / s5).abs() < 1e-12);
        assert!((m.components[[0, 1]] - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn full_basis_is_exact() {
        let x = random(30, 4, 1);
        let m = fit_pca(x.view(), 4).unwrap();
        let r = pca_reconstruct(&m, x.view()).unwrap();
        assert!((&r - &x).iter().all(|d| d.abs() < 1e-8));
    }

    #[test]
    fn mean_maps_to_mean() {
        let x = random(30, 5, 2);
        let m = fit_pca(x.view(), 2).unwrap();
        let q = m.mean.clone().insert_axis(Axis(0));
        let r = pca_reconstruct(&m, q.view()).unwrap();
        assert!((&r - &q).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn default_for_batadal_width() {
        assert_eq!(default_components(43), 21);
        assert_eq!(default_components(1), 1);
    }

    #[test]
    fn orthonormal_and_sorted() {
        let x = random(50, 6, 3);
        let m = fit_pca(x.view(), 4).unwrap();
        let g = m.components.dot(&m.components.t());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn too_many_components() {
        let x = random(10, 3, 4);
        assert!(fit_pca(x.view(), 4).is_err());
        assert!(fit_pca(x.view(), 0).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let m = fit_pca(random(10, 3, 5).view(), 1).unwrap();
        assert!(pca_reconstruct(&m, random(2, 4, 6).view()).is_err());
    }

    #[test]
    fn width_one_matches_plain_pca() {
        let x = random(40, 3, 7);
        let plain = fit_pca(x.view(), 1).unwrap();
        let wm = fit_windowed(x.view(), 1, true, None).unwrap();
        assert_eq!(wm.inner, plain);
        let y = random(15, 3, 8);
        assert_eq!(
            windowed_reconstruct(&wm, y.view()).unwrap(),
            pca_reconstruct(&plain, y.view()).unwrap()
        );
    }

    #[test]
    fn overlapping_full_rank_is_exact() {
        let x = random(60, 2, 9);
        let wm = fit_windowed(x.view(), 4, true, Some(8)).unwrap();
        let q = random(13, 2, 13);
        let r = windowed_reconstruct(&wm, q.view()).unwrap();
        assert!((&r - &q).iter().all(|d| d.abs() < 1e-8));
    }

    #[test]
    fn window_longer_than_training() {
        let x = random(3, 2, 10);
        assert!(fit_windowed(x.view(), 4, true, None).is_err());
    }

    #[test]
    fn non_overlapping_tiles_preserve_shape() {
        let x = random(40, 2, 11);
        let wm = fit_windowed(x.view(), 4, false, None).unwrap();
        let y = random(12, 2, 12);
        assert_eq!(windowed_reconstruct(&wm, y.view()).unwrap().dim(), (12, 2));
        let short = array![[0.1, 0.2]];
        assert_eq!(windowed_reconstruct(&wm, short.view()).unwrap().dim(), (1, 2));
    }
}

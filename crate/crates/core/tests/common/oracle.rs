//! Independent oracles for the screening distance, PCA, the DFT, alert
//! scoring and the composite detection score.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use physdetect::eval::batadal_score;
use physdetect::freq::{dft, frequency_analysis};
use physdetect::pca::{fit_pca, pca_reconstruct};
use physdetect::scoring::{alert, evaluate_grid, grid_weights, tune, DetectorConfig, Scheme};
use physdetect::screen::{ks_star, ks_stat, Ecdf};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure, Outcome};

fn runner(cases: u32) -> TestRunner {
    let cfg = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

const KS_CELLS: usize = 100_000;

/// Fraction of the sample at or below `x`, by counting.
fn count_cdf(sample: &[f64], x: f64) -> f64 {
    sample.iter().filter(|&&v| v <= x).count() as f64 / sample.len() as f64
}

/// Composite trapezoidal rule for `∫_0^1 |F_a - F_b|` on `KS_CELLS` cells.
fn trapezoid_ks(a: &[f64], b: &[f64]) -> f64 {
    let h = 1.0 / KS_CELLS as f64;
    let f = |i: usize| {
        let x = i as f64 * h;
        (count_cdf(a, x) - count_cdf(b, x)).abs()
    };
    let inner: f64 = (1..KS_CELLS).map(f).sum();
    h * (0.5 * f(0) + inner + 0.5 * f(KS_CELLS))
}

/// Sample on cell midpoints of the trapezoid grid, where each jump of the
/// step function is integrated exactly.
fn midpoint_sample(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let h = 1.0 / KS_CELLS as f64;
    let n = rng.random_range(5..=50);
    (0..n)
        .map(|_| rng.random_range(0..KS_CELLS / 100) as f64 * 100.0 * h + 0.5 * h)
        .collect()
}

pub fn ks_star_oracle() -> Outcome {
    let hand = ks_star(
        &Ecdf::new(&[0.0, 0.0, 1.0]).unwrap(),
        &Ecdf::new(&[1.0, 1.0, 1.0]).unwrap(),
        (0.0, 1.0),
    )
    .map_err(|e| e.to_string())?;
    ensure(hand == 2.0 / 3.0, || format!("[0,0,1] vs [1,1,1] gave {hand}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (a, b) = (midpoint_sample(&mut rng), midpoint_sample(&mut rng));
        let exact = ks_star(&Ecdf::new(&a).unwrap(), &Ecdf::new(&b).unwrap(), (0.0, 1.0)).map_err(|e| e.to_string())?;
        let oracle = trapezoid_ks(&a, &b);
        let err = (exact - oracle).abs();
        ensure(err <= 1e-6, || {
            format!("pair {case}: ks_star {exact} vs oracle {oracle}")
        })?;
        worst = worst.max(err);
    }

    let sample = prop::collection::vec(-5.0f64..5.0, 1..40);
    runner(100)
        .run(&(sample.clone(), sample), |(a, b)| {
            let (ea, eb) = (Ecdf::new(&a).unwrap(), Ecdf::new(&b).unwrap());
            let d = (-5.0, 5.0);
            let ab = ks_star(&ea, &eb, d).unwrap();
            prop_assert!((ab - ks_star(&eb, &ea, d).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=10.0 + 1e-12).contains(&ab));
            prop_assert!(ks_star(&ea, &ea, d).unwrap() == 0.0);
            let s = ks_stat(&ea, &eb);
            prop_assert!((0.0..=1.0).contains(&s));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "hand case exact, 100 pairs worst |error| {worst:.1e}, properties hold"
    ))
}

/// Projection onto the top `c` eigenvectors of the centered scatter matrix.
fn eigen_reconstruct(train: &Array2<f64>, x: &Array2<f64>, c: usize) -> Array2<f64> {
    let (t, f) = train.dim();
    let mean: Vec<f64> = (0..f).map(|j| train.column(j).sum() / t as f64).collect();
    let centered = DMatrix::from_fn(t, f, |i, j| train[[i, j]] - mean[j]);
    let eig = SymmetricEigen::new(centered.transpose() * &centered);
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_fn(f, c, |i, k| eig.eigenvectors[(i, order[k])]);
    let xc = DMatrix::from_fn(x.nrows(), f, |i, j| x[[i, j]] - mean[j]);
    let rec = &xc * &basis * basis.transpose();
    Array2::from_shape_fn(x.dim(), |(i, j)| rec[(i, j)] + mean[j])
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut oracle_err, mut full_err, mut idem_err) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..5 {
        let train = Array2::from_shape_fn((50, 8), |_| rng.random_range(-3.0..3.0));
        let probe = Array2::from_shape_fn((20, 8), |_| rng.random_range(-3.0..3.0));
        for c in 1..=8 {
            let model = fit_pca(train.view(), c).map_err(|e| e.to_string())?;
            for x in [&train, &probe] {
                let rec = pca_reconstruct(&model, x.view()).map_err(|e| e.to_string())?;
                let err = max_abs_diff(&rec, &eigen_reconstruct(&train, x, c));
                ensure(err <= 1e-9, || format!("trial {trial}, C={c}: oracle gap {err:.2e}"))?;
                oracle_err = oracle_err.max(err);
                let again = pca_reconstruct(&model, rec.view()).map_err(|e| e.to_string())?;
                let idem = max_abs_diff(&again, &rec);
                ensure(idem < 1e-8, || {
                    format!("trial {trial}, C={c}: idempotence gap {idem:.2e}")
                })?;
                idem_err = idem_err.max(idem);
                if c == 8 {
                    let full = max_abs_diff(&rec, x);
                    ensure(full < 1e-8, || format!("trial {trial}: C=F error {full:.2e}"))?;
                    full_err = full_err.max(full);
                }
            }
        }
    }
    Ok(format!(
        "oracle gap {oracle_err:.1e}, C=F error {full_err:.1e}, idempotence {idem_err:.1e}"
    ))
}

fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * (k * t % n) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

pub fn dft_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut parseval_worst, mut tones) = (0.0f64, 0.0f64, 0);
    for n in [16usize, 64, 128] {
        for _ in 0..5 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = dft(&x);
            for (k, (re, im)) in naive_dft(&x).into_iter().enumerate() {
                let err = (fast[k].re - re).abs().max((fast[k].im - im).abs());
                ensure(err <= 1e-9, || format!("N={n}, bin {k}: gap {err:.2e}"))?;
                worst = worst.max(err);
            }
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = fast.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            let rel = (time - freq).abs() / time;
            ensure(rel <= 1e-6, || format!("N={n}: Parseval relative error {rel:.2e}"))?;
            parseval_worst = parseval_worst.max(rel);
        }
        for k in 1..n / 2 {
            let phase = rng.random_range(0.0..2.0 * PI);
            let x: Vec<f64> = (0..n)
                .map(|t| 0.4 + (2.0 * PI * (k * t) as f64 / n as f64 + phase).cos())
                .collect();
            let p = frequency_analysis(&x, 1.0).map_err(|e| e.to_string())?;
            let bin = p.fundamental_freq * n as f64;
            ensure(bin.round() as usize == k && (bin - k as f64).abs() < 1e-9, || {
                format!("N={n}: tone in bin {k} recovered as {bin}")
            })?;
            tones += 1;
        }
    }
    Ok(format!(
        "worst bin gap {worst:.1e}, Parseval {parseval_worst:.1e}, {tones} tones recovered"
    ))
}

/// Alert at `i` iff `i >= w - 1` and every record in `i-w+1..=i` has some
/// feature strictly above `tau`.
fn enumerate_alerts(r: &Array2<f64>, tau: f64, w: usize) -> Vec<bool> {
    (0..r.nrows())
        .map(|i| i + 1 >= w && (i + 1 - w..=i).all(|j| r.row(j).iter().any(|&v| v > tau)))
        .collect()
}

/// Residuals on a coarse lattice so that values often equal `tau`.
fn lattice_residuals(rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (t, f) = (rng.random_range(10..60), rng.random_range(1..5));
    Array2::from_shape_fn((t, f), |_| rng.random_range(0..12) as f64 * 0.25)
}

fn alerts_at(r: &Array2<f64>, tau: f64, window: usize) -> Vec<bool> {
    let cfg = DetectorConfig {
        tau,
        window,
        scheme: Scheme::MaxNorm,
    };
    alert(r.view(), &cfg).expect("valid config").alerts
}

pub fn scoring_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..50 {
        let r = lattice_residuals(&mut rng);
        let tau = rng.random_range(0..12) as f64 * 0.25;
        let w = rng.random_range(1..8);
        let got = alerts_at(&r, tau, w);
        ensure(got == enumerate_alerts(&r, tau, w), || {
            format!("case {case}: tau {tau}, w {w} disagrees with enumeration")
        })?;
    }

    let w = grid_weights(&[5usize, 10, 15, 20]);
    ensure(w == vec![(5, 0.25), (10, 0.5), (15, 0.75), (20, 1.0)], || {
        format!("grid weights {w:?}")
    })?;
    let quiet = Array2::<f64>::zeros((30, 2));
    let grid = evaluate_grid(quiet.view(), &[20.0, 5.0, 15.0, 10.0], &[1]).map_err(|e| e.to_string())?;
    let mut weights: Vec<(f64, f64)> = grid.iter().map(|p| (p.tau, p.weight)).collect();
    weights.sort_by(|a, b| a.0.total_cmp(&b.0));
    ensure(
        weights == vec![(5.0, 0.25), (10.0, 0.5), (15.0, 0.75), (20.0, 1.0)],
        || format!("tuning weights {weights:?}"),
    )?;
    let picked = tune(quiet.view(), &[20.0, 5.0, 15.0, 10.0], &[1], 0, Scheme::MaxNorm).map_err(|e| e.to_string())?;
    ensure(picked.tau == 5.0, || format!("tune picked {picked:?}"))?;

    let subset = |small: &[bool], large: &[bool]| small.iter().zip(large).all(|(&s, &l)| !s || l);
    let matrices = (1usize..4, 5usize..60).prop_flat_map(|(f, t)| {
        prop::collection::vec(0u8..12, f * t).prop_map(move |v| {
            Array2::from_shape_vec((t, f), v.into_iter().map(|x| f64::from(x) * 0.25).collect()).unwrap()
        })
    });
    runner(100)
        .run(
            &(matrices, 0u8..12, 0u8..12, 1usize..10, 1usize..10),
            |(r, t1, t2, w1, w2)| {
                let (lo, hi) = (f64::from(t1.min(t2)) * 0.25, f64::from(t1.max(t2)) * 0.25);
                let (wl, wh) = (w1.min(w2), w1.max(w2));
                prop_assert!(subset(&alerts_at(&r, hi, wl), &alerts_at(&r, lo, wl)));
                prop_assert!(subset(&alerts_at(&r, lo, wh), &alerts_at(&r, lo, wl)));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    Ok("50 enumeration cases, weight example exact, 100 monotonicity cases".into())
}

/// Labels with one to three disjoint attack intervals and normal records
/// before the first.
fn random_labels(rng: &mut ChaCha8Rng) -> Vec<bool> {
    let t = rng.random_range(40..200);
    let mut labels = vec![false; t];
    let k = rng.random_range(1..=3);
    let slot = t / k;
    for i in 0..k {
        let s = i * slot + rng.random_range(1..slot / 2);
        let e = (s + rng.random_range(1..slot / 2)).min((i + 1) * slot - 1);
        labels[s..=e].iter_mut().for_each(|l| *l = true);
    }
    labels
}

pub fn batadal_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..20 {
        let labels = random_labels(&mut rng);
        let perfect = batadal_score(&labels, &labels, 0.5).map_err(|e| e.to_string())?;
        ensure(perfect.s == 1.0, || {
            format!("case {case}: perfect detection S = {}", perfect.s)
        })?;
        let silent = batadal_score(&labels, &vec![false; labels.len()], 0.5).map_err(|e| e.to_string())?;
        ensure(silent.s == 0.25, || format!("case {case}: no-alert S = {}", silent.s))?;
    }

    let placements = (any::<u64>(), 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0);
    runner(100)
        .run(&placements, |(seed, pick, early, late)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels = random_labels(&mut rng);
            let mut alerts: Vec<bool> = (0..labels.len()).map(|_| rng.random_bool(0.1)).collect();
            let intervals = physdetect::eval::attack_intervals(&labels);
            let (s, e) = intervals[((pick * intervals.len() as f64) as usize).min(intervals.len() - 1)];
            let len = e - s + 1;
            let (a, b) = ((early * len as f64) as usize, (late * len as f64) as usize);
            let (p, q) = (s + a.min(b).min(len - 1), s + a.max(b).min(len - 1));
            alerts[s..=e].iter_mut().for_each(|x| *x = false);
            let mut later = alerts.clone();
            later[q] = true;
            let mut earlier = alerts;
            earlier[p] = true;
            let sl = batadal_score(&labels, &later, 0.5).unwrap().s_ttd;
            let se = batadal_score(&labels, &earlier, 0.5).unwrap().s_ttd;
            prop_assert!(se >= sl, "earlier {se} < later {sl}");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("perfect S = 1, silent S = 0.25, earlier detection never lowers S_TTD (100 placements)".into())
}

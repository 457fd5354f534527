//! Central finite-difference check of every differentiable op and of both
//! model families.

use std::time::Instant;

use physdetect::neural::{CnnConfig, CnnModel, Graph, Mode, SequenceModel, Tensor, UaeConfig, UaeModel, Var};
use physdetect::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Outcome;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    inputs: Vec<Tensor>,
    build: Build,
}

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// `Σ w_i out_i` with fixed random weights, so every output element matters.
fn scalarize(g: &mut Graph, out: Var, weights: &[f64]) -> Result<Var> {
    let n = g.value(out).len();
    let flat = g.reshape(out, vec![1, n])?;
    let weighted = g.mul_cols(flat, &weights[..n])?;
    Ok(g.sum(weighted))
}

fn evaluate(case: &Case, inputs: &[Tensor], weights: &[f64]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let s = scalarize(&mut g, out, weights).unwrap();
    g.value(s).item()
}

/// Norm-wise relative error between the analytic and numeric gradients.
fn check(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let weights: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let s = scalarize(&mut g, out, &weights).unwrap();
    g.backward(s).unwrap();
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; case.inputs[i].len()]);
        for j in 0..case.inputs[i].len() {
            let mut p = case.inputs.clone();
            p[i].values_mut()[j] += H;
            let up = evaluate(case, &p, &weights);
            p[i].values_mut()[j] -= 2.0 * H;
            let down = evaluate(case, &p, &weights);
            let numeric = (up - down) / (2.0 * H);
            diff += (analytic[j] - numeric).powi(2);
            na += analytic[j].powi(2);
            nn += numeric.powi(2);
        }
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

fn case(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name: name.to_string(),
        inputs,
        build: Box::new(build),
    }
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let (b, l, f) = (rng.random_range(2..4), rng.random_range(3..6), rng.random_range(2..4));
    let k = rng.random_range(2..4);
    let mut c = vec![
        case("matmul", vec![random(rng, &[b, f]), random(rng, &[f, k])], |g, v| {
            g.matmul(v[0], v[1])
        }),
        case(
            "matmul_3d",
            vec![random(rng, &[b, l, f]), random(rng, &[f, k])],
            |g, v| g.matmul(v[0], v[1]),
        ),
        case("add_bias", vec![random(rng, &[b, f]), random(rng, &[f])], |g, v| {
            g.add_bias(v[0], v[1])
        }),
        case(
            "dense",
            vec![random(rng, &[b, f]), random(rng, &[f, k]), random(rng, &[k])],
            |g, v| g.dense(v[0], v[1], v[2]),
        ),
        case("add", vec![random(rng, &[b, f]), random(rng, &[b, f])], |g, v| {
            g.add(v[0], v[1])
        }),
        case("sub", vec![random(rng, &[b, f]), random(rng, &[b, f])], |g, v| {
            g.sub(v[0], v[1])
        }),
        case("relu", vec![off_zero(rng, &[b, f])], |g, v| Ok(g.relu(v[0]))),
        case("tanh", vec![random(rng, &[b, f])], |g, v| Ok(g.tanh(v[0]))),
        case("abs", vec![off_zero(rng, &[b, f])], |g, v| Ok(g.abs(v[0]))),
        case("scale", vec![random(rng, &[b, f])], |g, v| Ok(g.scale(v[0], -1.7))),
        case("reshape", vec![random(rng, &[b, l, f])], move |g, v| {
            g.reshape(v[0], vec![b * l, f])
        }),
        case(
            "conv1d",
            vec![random(rng, &[b, l, f]), random(rng, &[2, f, k]), random(rng, &[k])],
            |g, v| g.conv1d(v[0], v[1], v[2]),
        ),
        case("max_pool2", vec![random(rng, &[b, 2 * l, f])], |g, v| g.max_pool2(v[0])),
        case("diff_rows", vec![random(rng, &[l, f])], |g, v| g.diff_rows(v[0])),
        case(
            "concat_cols",
            vec![random(rng, &[l, f]), random(rng, &[l, k])],
            |g, v| g.concat_cols(v[0], v[1]),
        ),
        case("slice_cols", vec![random(rng, &[l, f + 2])], move |g, v| {
            g.slice_cols(v[0], 1, f + 1)
        }),
        case("mse", vec![random(rng, &[b, f]), random(rng, &[b, f])], |g, v| {
            g.mse(v[0], v[1])
        }),
        case("sum", vec![random(rng, &[b, f])], |g, v| Ok(g.sum(v[0]))),
        case("max", vec![random(rng, &[b, f])], |g, v| g.max(v[0])),
        case("logsumexp", vec![random(rng, &[b, f])], |g, v| g.logsumexp(v[0], 3.0)),
    ];
    let cols: Vec<f64> = (0..f).map(|_| rng.random_range(-2.0..2.0)).collect();
    c.push(case("mul_cols", vec![random(rng, &[b, f])], move |g, v| {
        g.mul_cols(v[0], &cols)
    }));
    let rows: Vec<usize> = (0..l + 2).map(|_| rng.random_range(0..l)).collect();
    c.push(case("gather_rows", vec![random(rng, &[l, f])], move |g, v| {
        g.gather_rows(v[0], rows.clone())
    }));
    let targets: Vec<usize> = (0..l).map(|i| i / 2).collect();
    let n_out = (l - 1) / 2 + 2;
    c.push(case("scatter_mean", vec![random(rng, &[l, f])], move |g, v| {
        g.scatter_mean(v[0], targets.clone(), n_out)
    }));
    c
}

/// Gradients with respect to both the input windows and every parameter.
fn model_case<M: SequenceModel + 'static>(name: &str, model: M, rng: &mut ChaCha8Rng) -> Case {
    let x = random(rng, &[3, model.input_len(), model.in_features()]);
    let mut inputs = vec![x];
    inputs.extend(model.params().iter().cloned());
    case(name, inputs, move |g, v| {
        model.forward(g, &v[1..], v[0], &mut Mode::Eval)
    })
}

fn model_cases(rng: &mut ChaCha8Rng, seed: u64) -> Vec<Case> {
    let uae = UaeModel::new(UaeConfig::new(2, 3), seed).unwrap();
    let mut relu_cfg = UaeConfig::new(3, 2);
    relu_cfg.activation = physdetect::neural::Activation::Relu;
    let uae_relu = UaeModel::new(relu_cfg, seed).unwrap();
    let mut cfg = CnnConfig::new(2);
    cfg.seq_len = 9;
    cfg.depth = 2;
    cfg.filters = 3;
    cfg.kernel_width = 2;
    cfg.pool_every = 1;
    cfg.out_len = 2;
    let cnn = CnnModel::new(cfg.clone(), seed).unwrap();
    cfg.in_features = 4;
    cfg.horizon = 1;
    let cnn_enriched = CnnModel::new(cfg, seed).unwrap();
    vec![
        model_case("uae_tanh", uae, rng),
        model_case("uae_relu", uae_relu, rng),
        model_case("cnn", cnn, rng),
        model_case("cnn_enriched_input", cnn_enriched, rng),
    ]
}

/// Every op and model on three seeds; fails on the first instance above tolerance.
pub fn master_check() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0, String::new());
    let mut count = 0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cases = op_cases(&mut rng);
        cases.extend(model_cases(&mut rng, seed));
        for c in &cases {
            let err = check(c, &mut rng);
            if !(err < TOL) {
                return Err(format!("{} (seed {seed}): relative error {err:.3e}", c.name));
            }
            if err > worst.0 {
                worst = (err, c.name.clone());
            }
            count += 1;
        }
    }
    let elapsed = start.elapsed();
    if count < 20 {
        return Err(format!("only {count} instances"));
    }
    if elapsed.as_secs_f64() >= 30.0 {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{count} instances, worst relative error {:.2e} ({}), {elapsed:.2?}",
        worst.0, worst.1
    ))
}

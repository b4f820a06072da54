//! Random small models shared by the integration tests.
#![allow(dead_code)]

use maskinfer_core::enclave::{Enclave, EnclaveConfig};
use maskinfer_core::harness::{random_input, run_protocol, trace_deviations};
use maskinfer_core::refnet::{Block, Conv, Dense, LayerKind, LayerNorm, Mha, PlainModel, Shape};
use maskinfer_core::{Mat, Result, SeededRng, Tensor4};

pub fn rand_mat(rows: usize, cols: usize, a: f64, rng: &mut SeededRng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.uniform(-a, a))
}

pub fn rand_vec(n: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

/// Uniform in `lo..=hi`.
pub fn dim(lo: usize, hi: usize, rng: &mut SeededRng) -> usize {
    lo + rng.index(hi - lo + 1)
}

pub fn dense(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Block<f64> {
    let a = 1.0 / (inputs as f64).sqrt();
    Block::Dense(
        Dense::new(
            rand_mat(outputs, inputs, a, rng),
            rand_vec(outputs, -a, a, rng),
        )
        .unwrap(),
    )
}

pub fn conv(cin: usize, cout: usize, k: usize, rng: &mut SeededRng) -> Block<f64> {
    let a = 1.0 / ((cin * k * k) as f64).sqrt();
    let kernels = Tensor4::from_fn([cout, cin, k, k], |_, _, _, _| rng.uniform(-a, a));
    Block::Conv(Conv::new(kernels, rand_vec(cout, -a, a, rng), 1, k / 2).unwrap())
}

pub fn layernorm(d: usize, rng: &mut SeededRng) -> Block<f64> {
    Block::LayerNorm(LayerNorm {
        gamma: rand_vec(d, 0.5, 1.5, rng),
        beta: rand_vec(d, -0.1, 0.1, rng),
        eps: 1e-5,
    })
}

pub fn mha(d: usize, heads: usize, rng: &mut SeededRng) -> Block<f64> {
    let a = 1.0 / (d as f64).sqrt();
    let mut w = || rand_mat(d, d, a, rng);
    Block::Mha(Mha::new(w(), w(), w(), w(), heads).unwrap())
}

/// Dense, ReLU, Dense, GELU and a residual joining the two activations; every width at most 8.
pub fn random_mlp(rng: &mut SeededRng) -> PlainModel<f64> {
    let (n, d0, d1, d2) = (
        dim(1, 8, rng),
        dim(1, 8, rng),
        dim(1, 8, rng),
        dim(1, 8, rng),
    );
    let blocks = vec![
        dense(d0, d1, rng),
        Block::Relu,
        dense(d1, d1, rng),
        Block::Gelu,
        Block::Residual { from: 2 },
        dense(d1, d2, rng),
    ];
    PlainModel::new(Shape::Mat { rows: n, cols: d0 }, blocks).unwrap()
}

/// Conv, ReLU, Conv, average pool, flatten, Dense, GELU; every dimension at most 8.
pub fn random_cnn(rng: &mut SeededRng) -> PlainModel<f64> {
    let (n, c0, c1, c2) = (
        dim(1, 3, rng),
        dim(1, 4, rng),
        dim(1, 4, rng),
        dim(1, 4, rng),
    );
    let (h, w) = (2 * dim(1, 4, rng), 2 * dim(1, 4, rng));
    let k = if rng.index(2) == 0 { 1 } else { 3 };
    let out = dim(1, 8, rng);
    let blocks = vec![
        conv(c0, c1, k, rng),
        Block::Relu,
        conv(c1, c2, 3, rng),
        Block::AvgPool { k: 2 },
        Block::Flatten,
        dense(c2 * (h / 2) * (w / 2), out, rng),
        Block::Gelu,
    ];
    PlainModel::new(
        Shape::T4 {
            dims: [n, c0, h, w],
        },
        blocks,
    )
    .unwrap()
}

/// Dense, attention, residual, LayerNorm, Dense; every dimension at most 8.
pub fn random_attention(rng: &mut SeededRng) -> PlainModel<f64> {
    let seq = dim(1, 8, rng);
    let heads = dim(1, 2, rng);
    let d = heads * dim(1, 8 / heads, rng).max(if heads == 1 { 2 } else { 1 });
    let (d_in, out) = (dim(1, 8, rng), dim(1, 8, rng));
    let blocks = vec![
        dense(d_in, d, rng),
        mha(d, heads, rng),
        Block::Residual { from: 1 },
        layernorm(d, rng),
        dense(d, out, rng),
    ];
    PlainModel::new(
        Shape::Mat {
            rows: seq,
            cols: d_in,
        },
        blocks,
    )
    .unwrap()
}

/// Runs one protocol inference and returns `(kind, deviation)` for every block.
pub fn layer_deviations(model: &PlainModel<f64>, seed: u64) -> Result<Vec<(LayerKind, f64)>> {
    let mut rng = SeededRng::new(seed);
    let x = random_input::<f64>(model.input_shape(), &mut rng);
    let mut enclave = Enclave::new(model, EnclaveConfig::default(), rng.next_u64())?;
    let run = run_protocol(&mut enclave, &x)?;
    let devs = trace_deviations(&enclave, model, &x, &run)?;
    Ok(model.kinds().into_iter().zip(devs).collect())
}

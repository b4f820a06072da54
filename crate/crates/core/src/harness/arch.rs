use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar, SeededRng, Tensor4};
use crate::refnet::{Act, BatchNorm, Block, Conv, Dense, LayerNorm, Mha, PlainModel, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    fn block<T>(self) -> Block<T> {
        match self {
            Activation::Relu => Block::Relu,
            Activation::Gelu => Block::Gelu,
        }
    }
}

/// One convolution stage: 3x3 conv (padding 1), batch norm, ReLU, 2x2 average pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

/// Desk-scale architecture templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ArchSpec {
    Mlp {
        batch: usize,
        input: usize,
        hidden: Vec<usize>,
        classes: usize,
        activation: Activation,
        /// Extra activations inserted after each hidden activation (same width).
        repeat_activation: usize,
    },
    Cnn {
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        stages: Vec<ConvStage>,
        hidden: Vec<usize>,
        classes: usize,
    },
    Transformer {
        seq: usize,
        d_in: usize,
        d_model: usize,
        heads: usize,
        ffn: usize,
        depth: usize,
        classes: usize,
        /// Gain of the input projection and of each sublayer's output projection, which sets
        /// the magnitude of the activations entering every normalization.
        sublayer_gain: f64,
        /// Gain of the classification head, which sets the magnitude of the output scores.
        head_gain: f64,
    },
}

pub const TEMPLATES: [&str; 3] = ["mlp", "cnn", "transformer"];

/// Sublayer and head gain of the transformer used for f32 error profiling. At unit gain the
/// f32 rounding floor of each normalization's output is comparable to the deviation entering
/// it, so no reduction is observable; at this gain the activations entering each normalization,
/// and the output scores, carry deviations large enough for standardization to shrink them.
pub const PROFILE_GAIN: f64 = 3000.0;

impl ArchSpec {
    pub fn mlp() -> Self {
        ArchSpec::Mlp {
            batch: 4,
            input: 16,
            hidden: vec![32, 32],
            classes: 10,
            activation: Activation::Relu,
            repeat_activation: 0,
        }
    }

    pub fn cnn() -> Self {
        ArchSpec::Cnn {
            batch: 2,
            channels: 3,
            height: 8,
            width: 8,
            stages: vec![
                ConvStage {
                    channels: 8,
                    kernel: 3,
                    pool: 2,
                },
                ConvStage {
                    channels: 16,
                    kernel: 3,
                    pool: 2,
                },
            ],
            hidden: vec![32],
            classes: 10,
        }
    }

    pub fn transformer() -> Self {
        ArchSpec::Transformer {
            seq: 8,
            d_in: 16,
            d_model: 16,
            heads: 2,
            ffn: 32,
            depth: 2,
            classes: 10,
            sublayer_gain: 1.0,
            head_gain: 1.0,
        }
    }

    /// The transformer template with sublayer and head gains set to [`PROFILE_GAIN`].
    pub fn transformer_profile() -> Self {
        let mut spec = ArchSpec::transformer();
        if let ArchSpec::Transformer {
            sublayer_gain,
            head_gain,
            ..
        } = &mut spec
        {
            *sublayer_gain = PROFILE_GAIN;
            *head_gain = PROFILE_GAIN;
        }
        spec
    }

    pub fn template(name: &str) -> Result<Self> {
        match name {
            "mlp" => Ok(ArchSpec::mlp()),
            "cnn" => Ok(ArchSpec::cnn()),
            "transformer" => Ok(ArchSpec::transformer()),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture `{other}` (expected one of {})",
                TEMPLATES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchSpec::Mlp { .. } => "mlp",
            ArchSpec::Cnn { .. } => "cnn",
            ArchSpec::Transformer { .. } => "transformer",
        }
    }

    pub fn input_shape(&self) -> Shape {
        match *self {
            ArchSpec::Mlp { batch, input, .. } => Shape::Mat {
                rows: batch,
                cols: input,
            },
            ArchSpec::Cnn {
                batch,
                channels,
                height,
                width,
                ..
            } => Shape::T4 {
                dims: [batch, channels, height, width],
            },
            ArchSpec::Transformer { seq, d_in, .. } => Shape::Mat {
                rows: seq,
                cols: d_in,
            },
        }
    }
}

fn uniform_vec<T: Scalar>(n: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Vec<T> {
    (0..n).map(|_| T::from_f64(rng.uniform(lo, hi))).collect()
}

/// Weights and bias uniform on `±gain/sqrt(fan_in)`.
fn dense<T: Scalar>(inputs: usize, outputs: usize, gain: f64, rng: &mut SeededRng) -> Block<T> {
    let a = gain / (inputs as f64).sqrt();
    let w = Mat::new(outputs, inputs, uniform_vec(inputs * outputs, -a, a, rng)).expect("sized");
    Block::Dense(Dense::new(w, uniform_vec(outputs, -a, a, rng)).expect("sized"))
}

fn conv<T: Scalar>(cin: usize, cout: usize, k: usize, rng: &mut SeededRng) -> Block<T> {
    let a = 1.0 / ((cin * k * k) as f64).sqrt();
    let kernels = Tensor4::new(
        [cout, cin, k, k],
        uniform_vec(cout * cin * k * k, -a, a, rng),
    )
    .expect("sized");
    Block::Conv(Conv::new(kernels, uniform_vec(cout, -a, a, rng), 1, k / 2).expect("valid conv"))
}

fn batchnorm<T: Scalar>(c: usize, rng: &mut SeededRng) -> Block<T> {
    Block::BatchNorm(BatchNorm {
        gamma: uniform_vec(c, 0.5, 1.5, rng),
        beta: uniform_vec(c, -0.1, 0.1, rng),
        mean: uniform_vec(c, -0.1, 0.1, rng),
        var: uniform_vec(c, 0.5, 1.5, rng),
        eps: T::from_f64(1e-5),
    })
}

fn layernorm<T: Scalar>(d: usize, rng: &mut SeededRng) -> Block<T> {
    Block::LayerNorm(LayerNorm {
        gamma: uniform_vec(d, 0.5, 1.5, rng),
        beta: uniform_vec(d, -0.1, 0.1, rng),
        eps: T::from_f64(1e-5),
    })
}

/// Attention with the output projection scaled by `gain`.
fn mha<T: Scalar>(d: usize, heads: usize, gain: f64, rng: &mut SeededRng) -> Result<Block<T>> {
    let a = 1.0 / (d as f64).sqrt();
    let mut w = |g: f64| Mat::new(d, d, uniform_vec(d * d, -a * g, a * g, rng)).expect("sized");
    let (wq, wk, wv, wo) = (w(1.0), w(1.0), w(1.0), w(gain));
    Ok(Block::Mha(Mha::new(wq, wk, wv, wo, heads)?))
}

/// Builds a model with fresh weights; identical seeds give bit-identical models.
pub fn build_model<T: Scalar>(spec: &ArchSpec, rng: &mut SeededRng) -> Result<PlainModel<T>> {
    let mut blocks = Vec::new();
    match spec {
        ArchSpec::Mlp {
            input,
            hidden,
            classes,
            activation,
            repeat_activation,
            ..
        } => {
            let mut width = *input;
            for &h in hidden {
                blocks.push(dense(width, h, 1.0, rng));
                for _ in 0..=*repeat_activation {
                    blocks.push(activation.block());
                }
                width = h;
            }
            blocks.push(dense(width, *classes, 1.0, rng));
        }
        ArchSpec::Cnn {
            channels,
            height,
            width,
            stages,
            hidden,
            classes,
            ..
        } => {
            let (mut c, mut h, mut w) = (*channels, *height, *width);
            for (i, s) in stages.iter().enumerate() {
                if s.kernel % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "stage {i}: kernel must be odd"
                    )));
                }
                if s.pool == 0 || h % s.pool != 0 || w % s.pool != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "stage {i}: {h}x{w} feature map is not divisible by pool {}",
                        s.pool
                    )));
                }
                blocks.push(conv(c, s.channels, s.kernel, rng));
                blocks.push(batchnorm(s.channels, rng));
                blocks.push(Block::Relu);
                blocks.push(Block::AvgPool { k: s.pool });
                c = s.channels;
                h /= s.pool;
                w /= s.pool;
            }
            blocks.push(Block::Flatten);
            let mut width = c * h * w;
            for &hd in hidden {
                blocks.push(dense(width, hd, 1.0, rng));
                blocks.push(Block::Relu);
                width = hd;
            }
            blocks.push(dense(width, *classes, 1.0, rng));
        }
        ArchSpec::Transformer {
            d_in,
            d_model,
            heads,
            ffn,
            depth,
            classes,
            sublayer_gain,
            head_gain,
            ..
        } => {
            let d = *d_model;
            let gain = *sublayer_gain;
            blocks.push(dense(*d_in, d, gain, rng));
            for _ in 0..*depth {
                let start = blocks.len();
                blocks.push(mha(d, *heads, gain, rng)?);
                blocks.push(Block::Residual { from: start });
                blocks.push(layernorm(d, rng));
                let mid = blocks.len();
                blocks.push(dense(d, *ffn, 1.0, rng));
                blocks.push(Block::Gelu);
                blocks.push(dense(*ffn, d, gain, rng));
                blocks.push(Block::Residual { from: mid });
                blocks.push(layernorm(d, rng));
            }
            blocks.push(dense(d, *classes, *head_gain, rng));
        }
    }
    PlainModel::new(spec.input_shape(), blocks)
}

/// Input entries uniform on (-1, 1).
pub fn random_input<T: Scalar>(shape: Shape, rng: &mut SeededRng) -> Act<T> {
    Act::from_vec(shape, uniform_vec(shape.len(), -1.0, 1.0, rng)).expect("sized")
}

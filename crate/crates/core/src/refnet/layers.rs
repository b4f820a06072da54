use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar, Tensor4};

/// `y = x·Wᵀ + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Mat<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Mat<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "Dense::new",
                format!("bias {} vs {} outputs", bias.len(), weight.rows()),
            ));
        }
        Ok(Dense { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// 2-D cross-correlation with kernels `out_ch x in_ch x kh x kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub kernels: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv<T> {
    pub fn new(kernels: Tensor4<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        if kernels.h() == 0 || kernels.w() == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "kernel dims and stride must be >= 1".into(),
            ));
        }
        if bias.len() != kernels.n() {
            return Err(Error::shape(
                "Conv::new",
                format!("bias {} vs {} output channels", bias.len(), kernels.n()),
            ));
        }
        Ok(Conv {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.c()
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.n()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |x: usize, k: usize| -> Result<usize> {
            let padded = x + 2 * self.padding;
            if padded < k {
                return Err(Error::shape(
                    "conv",
                    format!(
                        "input {x} with padding {} is smaller than kernel {k}",
                        self.padding
                    ),
                ));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((out(h, self.kernels.h())?, out(w, self.kernels.w())?))
    }
}

/// Frozen per-channel normalization: `(x - mean) / sqrt(var + eps) * gamma + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` of the equivalent affine map.
    pub fn affine(&self) -> Result<(Vec<T>, Vec<T>)> {
        let c = self.channels();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return Err(Error::shape("BatchNorm", "parameter lengths differ"));
        }
        let mut scale = Vec::with_capacity(c);
        let mut shift = Vec::with_capacity(c);
        for i in 0..c {
            let sigma = (self.var[i] + self.eps).sqrt();
            if !(sigma > T::ZERO) {
                return Err(Error::InvalidArgument(format!(
                    "channel {i} has non-positive sigma"
                )));
            }
            let s = self.gamma[i] / sigma;
            scale.push(s);
            shift.push(self.beta[i] - self.mean[i] * s);
        }
        Ok((scale, shift))
    }
}

/// Multi-head self-attention; projections are applied as `X·W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mha<T> {
    pub wq: Mat<T>,
    pub wk: Mat<T>,
    pub wv: Mat<T>,
    pub wo: Mat<T>,
    pub heads: usize,
    /// Causal masking. The masked runtime only supports this through the
    /// insecure-causal option, which exposes the sequence permutation.
    pub causal: bool,
}

impl<T: Scalar> Mha<T> {
    pub fn new(wq: Mat<T>, wk: Mat<T>, wv: Mat<T>, wo: Mat<T>, heads: usize) -> Result<Self> {
        let d = wq.rows();
        for w in [&wq, &wk, &wv, &wo] {
            if w.shape() != (d, d) {
                return Err(Error::shape(
                    "Mha::new",
                    format!("projection {:?} vs d_model {d}", w.shape()),
                ));
            }
        }
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {d} is not divisible by {heads} heads"
            )));
        }
        Ok(Mha {
            wq,
            wk,
            wv,
            wo,
            heads,
            causal: false,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(d: usize, eps: T) -> Self {
        LayerNorm {
            gamma: vec![T::ONE; d],
            beta: vec![T::ZERO; d],
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv,
    BatchNorm,
    AvgPool,
    Flatten,
    Relu,
    Gelu,
    Mha,
    LayerNorm,
    Residual,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv => "conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::AvgPool => "avgpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Relu => "relu",
            LayerKind::Gelu => "gelu",
            LayerKind::Mha => "mha",
            LayerKind::LayerNorm => "layernorm",
            LayerKind::Residual => "residual",
        }
    }

    pub fn is_nonlinear(self) -> bool {
        matches!(self, LayerKind::Relu | LayerKind::Gelu)
    }

    pub const ALL: [LayerKind; 10] = [
        LayerKind::Dense,
        LayerKind::Conv,
        LayerKind::BatchNorm,
        LayerKind::AvgPool,
        LayerKind::Flatten,
        LayerKind::Relu,
        LayerKind::Gelu,
        LayerKind::Mha,
        LayerKind::LayerNorm,
        LayerKind::Residual,
    ];
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block<T> {
    Dense(Dense<T>),
    Conv(Conv<T>),
    BatchNorm(BatchNorm<T>),
    AvgPool {
        k: usize,
    },
    Flatten,
    Relu,
    Gelu,
    Mha(Mha<T>),
    LayerNorm(LayerNorm<T>),
    /// Adds activation `from` (0 is the model input, `i` is the output of block `i - 1`).
    Residual {
        from: usize,
    },
}

impl<T> Block<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Block::Dense(_) => LayerKind::Dense,
            Block::Conv(_) => LayerKind::Conv,
            Block::BatchNorm(_) => LayerKind::BatchNorm,
            Block::AvgPool { .. } => LayerKind::AvgPool,
            Block::Flatten => LayerKind::Flatten,
            Block::Relu => LayerKind::Relu,
            Block::Gelu => LayerKind::Gelu,
            Block::Mha(_) => LayerKind::Mha,
            Block::LayerNorm(_) => LayerKind::LayerNorm,
            Block::Residual { .. } => LayerKind::Residual,
        }
    }
}

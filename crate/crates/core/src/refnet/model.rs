use crate::error::{Error, Result};
use crate::matcore::Scalar;
use crate::refnet::ops::{
    avgpool_fwd, batchnorm_fwd, bn_fuse, conv_fwd, dense_fwd, flatten_fwd, gelu, layernorm_fwd,
    mha_fwd, relu,
};
use crate::refnet::{Act, BatchNorm, Block, Conv, Dense, LayerKind, LayerNorm, Mha, Shape};

/// A plaintext feed-forward model: a block list applied to an input of fixed shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainModel<T> {
    input: Shape,
    blocks: Vec<Block<T>>,
}

impl<T: Scalar> PlainModel<T> {
    /// Validates the block list by propagating shapes from `input`.
    pub fn new(input: Shape, blocks: Vec<Block<T>>) -> Result<Self> {
        let model = PlainModel { input, blocks };
        model.shapes()?;
        Ok(model)
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.blocks.iter().map(Block::kind).collect()
    }

    pub fn output_shape(&self) -> Shape {
        *self
            .shapes()
            .expect("validated at construction")
            .last()
            .expect("non-empty")
    }

    pub fn nonlinear_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind().is_nonlinear())
            .count()
    }

    /// Activation shapes `0..=len`: the input followed by each block's output.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input];
        for (i, b) in self.blocks.iter().enumerate() {
            let next = block_shape(b, &shapes).map_err(|e| e.at_layer(i, b.kind().name()))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn forward(&self, x: &Act<T>) -> Result<Act<T>> {
        Ok(self.trace(x)?.pop().expect("trace includes the input"))
    }

    /// All activations, starting with the input.
    pub fn trace(&self, x: &Act<T>) -> Result<Vec<Act<T>>> {
        if x.shape() != self.input {
            return Err(Error::shape(
                "model input",
                format!("got {}, model expects {}", x.shape(), self.input),
            ));
        }
        let mut acts = vec![x.clone()];
        for (i, b) in self.blocks.iter().enumerate() {
            let next = block_fwd(b, &acts).map_err(|e| e.at_layer(i, b.kind().name()))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Folds every batch normalization into the convolution right before it.
    pub fn fuse_batchnorm(&self) -> Result<Self> {
        if self
            .blocks
            .iter()
            .any(|b| matches!(b, Block::Residual { .. }))
        {
            return Err(Error::Unsupported(
                "batchnorm fusion with residual connections".into(),
            ));
        }
        let mut out: Vec<Block<T>> = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            match (b, out.last_mut()) {
                (Block::BatchNorm(bn), Some(Block::Conv(c))) => *c = bn_fuse(c, bn)?,
                (Block::BatchNorm(_), _) => {
                    return Err(Error::Unsupported(format!(
                        "batchnorm at block {i} does not follow a convolution"
                    )))
                }
                _ => out.push(b.clone()),
            }
        }
        PlainModel::new(self.input, out)
    }

    /// Appends an identity-affine layer normalization over the output.
    pub fn append_final_norm(&self, eps: T) -> Result<Self> {
        let d = match self.output_shape() {
            Shape::Mat { cols, .. } => cols,
            Shape::T4 { .. } => {
                return Err(Error::Unsupported("final norm on a 4-D output".into()))
            }
        };
        let mut blocks = self.blocks.clone();
        blocks.push(Block::LayerNorm(LayerNorm::identity(d, eps)));
        PlainModel::new(self.input, blocks)
    }

    pub fn cast<U: Scalar>(&self) -> PlainModel<U> {
        PlainModel {
            input: self.input,
            blocks: self.blocks.iter().map(cast_block).collect(),
        }
    }
}

fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64(x.to_f64())).collect()
}

fn cast_block<T: Scalar, U: Scalar>(b: &Block<T>) -> Block<U> {
    match b {
        Block::Dense(d) => Block::Dense(Dense {
            weight: d.weight.cast(),
            bias: cast_vec(&d.bias),
        }),
        Block::Conv(c) => Block::Conv(Conv {
            kernels: c.kernels.cast(),
            bias: cast_vec(&c.bias),
            stride: c.stride,
            padding: c.padding,
        }),
        Block::BatchNorm(bn) => Block::BatchNorm(BatchNorm {
            gamma: cast_vec(&bn.gamma),
            beta: cast_vec(&bn.beta),
            mean: cast_vec(&bn.mean),
            var: cast_vec(&bn.var),
            eps: U::from_f64(bn.eps.to_f64()),
        }),
        Block::AvgPool { k } => Block::AvgPool { k: *k },
        Block::Flatten => Block::Flatten,
        Block::Relu => Block::Relu,
        Block::Gelu => Block::Gelu,
        Block::Mha(m) => Block::Mha(Mha {
            wq: m.wq.cast(),
            wk: m.wk.cast(),
            wv: m.wv.cast(),
            wo: m.wo.cast(),
            heads: m.heads,
            causal: m.causal,
        }),
        Block::LayerNorm(l) => Block::LayerNorm(LayerNorm {
            gamma: cast_vec(&l.gamma),
            beta: cast_vec(&l.beta),
            eps: U::from_f64(l.eps.to_f64()),
        }),
        Block::Residual { from } => Block::Residual { from: *from },
    }
}

fn mat_cols(s: Shape, op: &'static str) -> Result<(usize, usize)> {
    match s {
        Shape::Mat { rows, cols } => Ok((rows, cols)),
        Shape::T4 { .. } => Err(Error::shape(op, format!("expected a matrix, got {s}"))),
    }
}

fn t4_dims(s: Shape, op: &'static str) -> Result<[usize; 4]> {
    match s {
        Shape::T4 { dims } => Ok(dims),
        Shape::Mat { .. } => Err(Error::shape(op, format!("expected a 4-D tensor, got {s}"))),
    }
}

fn residual_source(from: usize, current: usize) -> Result<()> {
    if from >= current {
        return Err(Error::InvalidArgument(format!(
            "residual source {from} is not an earlier activation (current {current})"
        )));
    }
    Ok(())
}

fn block_shape<T: Scalar>(b: &Block<T>, shapes: &[Shape]) -> Result<Shape> {
    let s = *shapes.last().expect("input shape present");
    match b {
        Block::Dense(d) => {
            let (rows, cols) = mat_cols(s, "dense")?;
            if cols != d.inputs() {
                return Err(Error::shape(
                    "dense",
                    format!("{cols} inputs vs layer {}", d.inputs()),
                ));
            }
            Ok(Shape::Mat {
                rows,
                cols: d.outputs(),
            })
        }
        Block::Conv(c) => {
            let [n, ch, h, w] = t4_dims(s, "conv")?;
            if ch != c.in_channels() {
                return Err(Error::shape(
                    "conv",
                    format!("{ch} channels vs kernels {}", c.in_channels()),
                ));
            }
            let (oh, ow) = c.output_hw(h, w)?;
            Ok(Shape::T4 {
                dims: [n, c.out_channels(), oh, ow],
            })
        }
        Block::BatchNorm(bn) => {
            let [_, ch, _, _] = t4_dims(s, "batchnorm")?;
            if ch != bn.channels() {
                return Err(Error::shape(
                    "batchnorm",
                    format!("{ch} channels vs {}", bn.channels()),
                ));
            }
            Ok(s)
        }
        Block::AvgPool { k } => {
            let [n, c, h, w] = t4_dims(s, "avgpool")?;
            if *k == 0 || h % k != 0 || w % k != 0 {
                return Err(Error::shape(
                    "avgpool",
                    format!("{h}x{w} is not divisible by window {k}"),
                ));
            }
            Ok(Shape::T4 {
                dims: [n, c, h / k, w / k],
            })
        }
        Block::Flatten => {
            let [n, c, h, w] = t4_dims(s, "flatten")?;
            Ok(Shape::Mat {
                rows: n,
                cols: c * h * w,
            })
        }
        Block::Relu | Block::Gelu => Ok(s),
        Block::Mha(m) => {
            let (_, cols) = mat_cols(s, "mha")?;
            if cols != m.d_model() {
                return Err(Error::shape(
                    "mha",
                    format!("{cols} columns vs d_model {}", m.d_model()),
                ));
            }
            Ok(s)
        }
        Block::LayerNorm(l) => {
            let (_, cols) = mat_cols(s, "layernorm")?;
            if cols != l.dim() {
                return Err(Error::shape(
                    "layernorm",
                    format!("{cols} columns vs {}", l.dim()),
                ));
            }
            Ok(s)
        }
        Block::Residual { from } => {
            residual_source(*from, shapes.len())?;
            if shapes[*from] != s {
                return Err(Error::shape(
                    "residual",
                    format!("{} vs {s}", shapes[*from]),
                ));
            }
            Ok(s)
        }
    }
}

fn block_fwd<T: Scalar>(b: &Block<T>, acts: &[Act<T>]) -> Result<Act<T>> {
    let x = acts.last().expect("input present");
    Ok(match b {
        Block::Dense(d) => Act::Mat(dense_fwd(x.as_mat()?, d)?),
        Block::Conv(c) => Act::T4(conv_fwd(x.as_t4()?, c)?),
        Block::BatchNorm(bn) => Act::T4(batchnorm_fwd(x.as_t4()?, bn)?),
        Block::AvgPool { k } => Act::T4(avgpool_fwd(x.as_t4()?, *k)?),
        Block::Flatten => Act::Mat(flatten_fwd(x.as_t4()?)),
        Block::Relu => x.map(relu),
        Block::Gelu => x.map(gelu),
        Block::Mha(m) => Act::Mat(mha_fwd(x.as_mat()?, m)?),
        Block::LayerNorm(l) => Act::Mat(layernorm_fwd(x.as_mat()?, l)?),
        Block::Residual { from } => {
            residual_source(*from, acts.len())?;
            x.add(&acts[*from])?
        }
    })
}

use crate::error::{Error, Result};
use crate::matcore::{kron, Mat, Scalar, Tensor4};
use crate::refnet::ops::{attention, conv_linear, gelu, norm_rows, relu};
use crate::refnet::{Act, LayerKind};
use crate::runtime::bundle::check_pairing;
use crate::runtime::{
    AttentionMaterials, BlockMaterials, ExtraOps, GeluMaterials, LinearMaterials, MaskTag,
    NormMaterials, ObfBlock, ObfBundle, ObfWeights, OpCounters, OtpMaterials, ReluMaterials,
};

/// An activation in the masked domain together with its mask tag.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAct<T> {
    pub act: Act<T>,
    pub tag: MaskTag,
}

fn apply_pad<T: Scalar>(y: Act<T>, pad: &Option<Act<T>>) -> Result<Act<T>> {
    match pad {
        Some(p) => y.add(p),
        None => Ok(y),
    }
}

/// `x̃ · W̃ + b̃`, plus the padding correction on the first layer.
pub fn exec_dense<T: Scalar>(x: &Act<T>, w: &Mat<T>, m: &LinearMaterials<T>) -> Result<Act<T>> {
    let y = x.as_mat()?.matmul(w)?.add(&m.bias)?;
    apply_pad(Act::Mat(y), &m.pad)
}

pub fn exec_conv<T: Scalar>(
    x: &Act<T>,
    kernels: &Tensor4<T>,
    stride: usize,
    padding: usize,
    m: &LinearMaterials<T>,
) -> Result<Act<T>> {
    let y = conv_linear(x.as_t4()?, kernels, stride, padding)?.add_channel_bias(&m.bias)?;
    apply_pad(Act::T4(y), &m.pad)
}

/// Masks pass through average pooling untouched.
pub fn exec_avgpool<T: Scalar>(x: &Act<T>, k: usize) -> Result<Act<T>> {
    Ok(Act::T4(crate::refnet::ops::avgpool_fwd(x.as_t4()?, k)?))
}

/// The column mask becomes `Q ⊗ I_hw`; no arithmetic is needed.
pub fn exec_flatten<T: Scalar>(x: &Act<T>) -> Result<Act<T>> {
    Ok(Act::Mat(x.as_t4()?.flatten()))
}

fn lift<T: Scalar>(x: &Mat<T>, r2: &Mat<T>, m1: &Mat<T>, m2: &Mat<T>) -> Result<Mat<T>> {
    m1.matmul(&kron(x, r2)?)?.matmul(m2)
}

/// Headroom over the first-order rounding bound in the extraction check.
const ROUNDING_HEADROOM: f64 = 16.0;

/// Reads `Y` back from `Y ⊗ R₂`, checking every Kronecker block against the `(0, 0)` one.
/// The tolerance is the larger of the type's floor and the rounding the lift can cause,
/// `ε·κ(M₁)·κ(M₂)`, so ill-conditioned materials do not trip the check spuriously.
fn extract<T: Scalar>(u: &Mat<T>, m: &ReluMaterials<T>) -> Result<Mat<T>> {
    let r2 = &m.r2;
    let kappa = m.m1.norm_1() * m.m1_inv.norm_1() * m.m2.norm_1() * m.m2_inv.norm_1();
    let tolerance = T::EXTRACTION_TOL.max(ROUNDING_HEADROOM * T::EPSILON * kappa);
    let (p, q) = r2.shape();
    let (rows, cols) = (u.rows() / p, u.cols() / q);
    let r00 = r2[(0, 0)];
    let y = Mat::from_fn(rows, cols, |i, j| u[(i * p, j * q)] / r00);
    let scale = y.max_abs().max(f64::MIN_POSITIVE) * r2.max_abs();
    for s in 0..p {
        for t in 0..q {
            let rst = r2[(s, t)];
            let mut dev = 0.0f64;
            for i in 0..rows {
                for j in 0..cols {
                    dev = dev.max((u[(i * p + s, j * q + t)] - y[(i, j)] * rst).to_f64().abs());
                }
            }
            let rel = dev / scale;
            if !(rel <= tolerance) {
                return Err(Error::Extraction {
                    s,
                    t,
                    deviation: rel,
                    tolerance,
                });
            }
        }
    }
    Ok(y)
}

/// Masked ReLU: lift into a permuted Kronecker domain, apply ReLU, undo the lift and read
/// the result out of the `(0, 0)` block.
pub fn exec_relu<T: Scalar>(x: &Act<T>, m: &ReluMaterials<T>) -> Result<Act<T>> {
    let z = lift(&x.to_rows(), &m.r2, &m.m1, &m.m2)?.map(relu);
    let u = m.m1_inv.matmul(&z)?.matmul(&m.m2_inv)?;
    Act::from_rows(extract(&u, m)?, x.shape())
}

/// Masked GELU: the selection masks pick the Kronecker block whose scale factor is 1.
pub fn exec_gelu<T: Scalar>(x: &Act<T>, m: &GeluMaterials<T>) -> Result<Act<T>> {
    let z = lift(&x.to_rows(), &m.r2, &m.m1, &m.m2)?.map(gelu);
    if !z.all_finite() {
        return Err(Error::NonFinite("gelu lift"));
    }
    let y = m.m3.matmul(&z)?.matmul(&m.m4)?;
    Act::from_rows(y, x.shape())
}

/// Attention on a row-permuted, column-masked input with pre-masked projections.
pub fn exec_mha<T: Scalar>(
    x: &MaskedAct<T>,
    w: (&Mat<T>, &Mat<T>, &Mat<T>, &Mat<T>),
    heads: usize,
    m: &AttentionMaterials<T>,
) -> Result<Act<T>> {
    if !x.tag.row_perm {
        return Err(Error::MaskTag(format!(
            "attention needs a permutation row mask, input carries {}",
            x.tag
        )));
    }
    let xm = x.act.as_mat()?;
    let y = match &m.causal {
        Some(c) => {
            let allowed = |i: usize, j: usize| c[(i, j)] != T::ZERO;
            attention(xm, w.0, w.1, w.2, w.3, heads, Some(&allowed))?
        }
        None => attention(xm, w.0, w.1, w.2, w.3, heads, None)?,
    };
    Ok(Act::Mat(y))
}

/// Mask replacement through the gadget, row-wise standardization, then the masked affine step.
pub fn exec_layernorm<T: Scalar>(x: &MaskedAct<T>, m: &NormMaterials<T>) -> Result<Act<T>> {
    if !x.tag.row_perm {
        return Err(Error::MaskTag(format!(
            "normalization needs a permutation row mask, input carries {}",
            x.tag
        )));
    }
    let swapped = x.act.as_mat()?.matmul(&m.gadget)?;
    let normed = norm_rows(&swapped, m.eps);
    Ok(Act::Mat(normed.matmul(&m.affine_w)?.add(&m.affine_b)?))
}

pub fn exec_residual<T: Scalar>(a: &MaskedAct<T>, b: &MaskedAct<T>) -> Result<MaskedAct<T>> {
    if a.tag != b.tag {
        return Err(Error::MaskTag(format!("cannot add {} to {}", b.tag, a.tag)));
    }
    Ok(MaskedAct {
        act: a.act.add(&b.act)?,
        tag: a.tag,
    })
}

/// An obfuscated model ready to run one inference: reusable weights plus that inference's
/// materials.
#[derive(Debug, Clone, Copy)]
pub struct ObfModel<'a, T> {
    weights: &'a ObfWeights<T>,
    otp: &'a OtpMaterials<T>,
}

impl<'a, T: Scalar> ObfModel<'a, T> {
    pub fn assemble(weights: &'a ObfWeights<T>, otp: &'a OtpMaterials<T>) -> Result<Self> {
        weights.validate()?;
        check_pairing(weights, otp)?;
        Ok(ObfModel { weights, otp })
    }

    pub fn from_bundle(bundle: &'a ObfBundle<T>) -> Result<Self> {
        let otp = bundle.otp.as_ref().ok_or_else(|| {
            Error::InvalidArgument("bundle carries no per-inference materials".into())
        })?;
        ObfModel::assemble(&bundle.weights, otp)
    }

    pub fn weights(&self) -> &ObfWeights<T> {
        self.weights
    }

    pub fn materials(&self) -> &OtpMaterials<T> {
        self.otp
    }
}

fn wrong_materials(kind: LayerKind) -> Error {
    Error::Format(format!(
        "{kind} block has mismatched per-inference materials"
    ))
}

fn exec_block<T: Scalar>(
    block: &ObfBlock<T>,
    mats: &BlockMaterials<T>,
    acts: &[MaskedAct<T>],
    out_tag: MaskTag,
) -> Result<(MaskedAct<T>, ExtraOps)> {
    let x = acts.last().expect("input present");
    let kind = block.kind();
    let act = match (block, mats) {
        (ObfBlock::Dense { w }, BlockMaterials::Linear(m)) => exec_dense(&x.act, w, m)?,
        (
            ObfBlock::Conv {
                kernels,
                stride,
                padding,
            },
            BlockMaterials::Linear(m),
        ) => exec_conv(&x.act, kernels, *stride, *padding, m)?,
        (ObfBlock::AvgPool { k }, BlockMaterials::None) => exec_avgpool(&x.act, *k)?,
        (ObfBlock::Flatten, BlockMaterials::None) => exec_flatten(&x.act)?,
        (ObfBlock::Relu, BlockMaterials::Relu(m)) => exec_relu(&x.act, m)?,
        (ObfBlock::Gelu, BlockMaterials::Gelu(m)) => exec_gelu(&x.act, m)?,
        (
            ObfBlock::Mha {
                wq,
                wk,
                wv,
                wo,
                heads,
            },
            BlockMaterials::Attention(m),
        ) => exec_mha(x, (wq, wk, wv, wo), *heads, m)?,
        (ObfBlock::LayerNorm { .. }, BlockMaterials::Norm(m)) => exec_layernorm(x, m)?,
        (ObfBlock::Residual { from }, BlockMaterials::None) => {
            let other = acts.get(*from).ok_or(Error::IndexOutOfRange {
                index: *from,
                size: acts.len(),
            })?;
            exec_residual(x, other)?.act
        }
        _ => return Err(wrong_materials(kind)),
    };
    Ok((MaskedAct { act, tag: out_tag }, ExtraOps::expected(kind)))
}

/// Runs the whole masked forward pass and returns the masked output and counters.
pub fn run<T: Scalar>(
    model: &ObfModel<'_, T>,
    x: &MaskedAct<T>,
) -> Result<(MaskedAct<T>, OpCounters)> {
    let (mut acts, counters) = run_traced(model, x)?;
    Ok((acts.pop().expect("trace includes the input"), counters))
}

/// Like [`run`], keeping every masked activation.
pub fn run_traced<T: Scalar>(
    model: &ObfModel<'_, T>,
    x: &MaskedAct<T>,
) -> Result<(Vec<MaskedAct<T>>, OpCounters)> {
    let w = model.weights;
    if x.act.shape() != w.input {
        return Err(Error::shape(
            "masked input",
            format!("got {}, model expects {}", x.act.shape(), w.input),
        ));
    }
    if x.tag != w.tags[0] {
        return Err(Error::MaskTag(format!(
            "input carries {}, model expects {}",
            x.tag, w.tags[0]
        )));
    }
    let mut counters = OpCounters::default();
    let mut acts = vec![x.clone()];
    for (i, (block, mats)) in w.blocks.iter().zip(&model.otp.blocks).enumerate() {
        let kind = block.kind();
        let (next, ops) = exec_block(block, mats, &acts, w.tags[i + 1])
            .map_err(|e| e.at_layer(i, kind.name()))?;
        counters.record(i, kind, ops);
        acts.push(next);
    }
    Ok((acts, counters))
}

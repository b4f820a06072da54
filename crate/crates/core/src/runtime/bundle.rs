use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar, Tensor4};
use crate::refnet::{Act, LayerKind, Shape};

/// Opaque mask identity carried by a masked activation. Two activations can be added only if
/// their tags agree; the tag says nothing about mask values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskTag {
    /// Whether the row mask is a permutation (required by attention and normalization).
    pub row_perm: bool,
    /// Column-mask class.
    pub col: u32,
}

impl std::fmt::Display for MaskTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let row = if self.row_perm { "perm" } else { "dense" };
        write!(f, "row:{row}/col:{}", self.col)
    }
}

/// Reusable obfuscated layer, produced once per model.
#[derive(Debug, Clone, PartialEq)]
pub enum ObfBlock<T> {
    /// `x̃ · w` with `w` stored `in x out`.
    Dense {
        w: Mat<T>,
    },
    Conv {
        kernels: Tensor4<T>,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        k: usize,
    },
    Flatten,
    Relu,
    Gelu,
    Mha {
        wq: Mat<T>,
        wk: Mat<T>,
        wv: Mat<T>,
        wo: Mat<T>,
        heads: usize,
    },
    LayerNorm {
        dim: usize,
    },
    Residual {
        from: usize,
    },
}

impl<T> ObfBlock<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            ObfBlock::Dense { .. } => LayerKind::Dense,
            ObfBlock::Conv { .. } => LayerKind::Conv,
            ObfBlock::AvgPool { .. } => LayerKind::AvgPool,
            ObfBlock::Flatten => LayerKind::Flatten,
            ObfBlock::Relu => LayerKind::Relu,
            ObfBlock::Gelu => LayerKind::Gelu,
            ObfBlock::Mha { .. } => LayerKind::Mha,
            ObfBlock::LayerNorm { .. } => LayerKind::LayerNorm,
            ObfBlock::Residual { .. } => LayerKind::Residual,
        }
    }
}

/// The reusable half of a bundle: obfuscated weights plus the public mask-tag chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ObfWeights<T> {
    pub input: Shape,
    /// Tag of every activation, `0..=blocks.len()`.
    pub tags: Vec<MaskTag>,
    pub blocks: Vec<ObfBlock<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMaterials<T> {
    /// Expanded bias, `n x out`.
    pub bias: Mat<T>,
    /// Input-padding correction, present on the first layer only.
    pub pad: Option<Act<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluMaterials<T> {
    pub m1: Mat<T>,
    pub m2: Mat<T>,
    pub m1_inv: Mat<T>,
    pub m2_inv: Mat<T>,
    pub r2: Mat<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeluMaterials<T> {
    pub m1: Mat<T>,
    pub m2: Mat<T>,
    pub m3: Mat<T>,
    pub m4: Mat<T>,
    pub r2: Mat<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormMaterials<T> {
    /// Masked gadget `N⁻¹ G π₂`.
    pub gadget: Mat<T>,
    /// Standardization epsilon rescaled to the gadget's scale.
    pub eps: T,
    /// Masked diagonal affine step, `d x d`.
    pub affine_w: Mat<T>,
    /// Expanded affine shift, `seq x d`.
    pub affine_b: Mat<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaterials<T> {
    /// Sequence-permuted causal mask (1 = allowed). Only present in insecure-causal mode,
    /// where it reveals the sequence permutation.
    pub causal: Option<Mat<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockMaterials<T> {
    None,
    Linear(LinearMaterials<T>),
    Relu(ReluMaterials<T>),
    Gelu(GeluMaterials<T>),
    Norm(NormMaterials<T>),
    Attention(AttentionMaterials<T>),
}

/// Per-inference public materials. Never reused across inferences.
#[derive(Debug, Clone, PartialEq)]
pub struct OtpMaterials<T> {
    pub inference: u64,
    pub blocks: Vec<BlockMaterials<T>>,
}

/// Everything the untrusted side receives.
#[derive(Debug, Clone, PartialEq)]
pub struct ObfBundle<T> {
    pub weights: ObfWeights<T>,
    pub otp: Option<OtpMaterials<T>>,
}

/// A borrowed view of one tensor-valued bundle field.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<'a, T> {
    pub block: usize,
    pub kind: LayerKind,
    pub field: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

impl<T> NamedTensor<'_, T> {
    pub fn name(&self) -> String {
        format!("b{}.{}", self.block, self.field)
    }
}

fn mat_field<'a, T>(
    block: usize,
    kind: LayerKind,
    field: &'static str,
    m: &'a Mat<T>,
) -> NamedTensor<'a, T>
where
    T: Scalar,
{
    NamedTensor {
        block,
        kind,
        field,
        dims: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    }
}

fn act_field<'a, T: Scalar>(
    block: usize,
    kind: LayerKind,
    field: &'static str,
    a: &'a Act<T>,
) -> NamedTensor<'a, T> {
    let dims = match a.shape() {
        Shape::Mat { rows, cols } => vec![rows, cols],
        Shape::T4 { dims } => dims.to_vec(),
    };
    NamedTensor {
        block,
        kind,
        field,
        dims,
        data: a.as_slice(),
    }
}

impl<T: Scalar> ObfWeights<T> {
    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let kind = b.kind();
            match b {
                ObfBlock::Dense { w } => out.push(mat_field(i, kind, "w", w)),
                ObfBlock::Conv { kernels, .. } => out.push(NamedTensor {
                    block: i,
                    kind,
                    field: "kernels",
                    dims: kernels.dims().to_vec(),
                    data: kernels.as_slice(),
                }),
                ObfBlock::Mha { wq, wk, wv, wo, .. } => {
                    out.push(mat_field(i, kind, "wq", wq));
                    out.push(mat_field(i, kind, "wk", wk));
                    out.push(mat_field(i, kind, "wv", wv));
                    out.push(mat_field(i, kind, "wo", wo));
                }
                _ => {}
            }
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum::<usize>() * T::PRECISION.bytes()
    }
}

impl<T: Scalar> OtpMaterials<T> {
    pub fn tensors(&self, kinds: &[LayerKind]) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        for (i, (m, &kind)) in self.blocks.iter().zip(kinds).enumerate() {
            match m {
                BlockMaterials::None => {}
                BlockMaterials::Linear(l) => {
                    out.push(mat_field(i, kind, "bias", &l.bias));
                    if let Some(pad) = &l.pad {
                        out.push(act_field(i, kind, "pad", pad));
                    }
                }
                BlockMaterials::Relu(r) => {
                    out.push(mat_field(i, kind, "m1", &r.m1));
                    out.push(mat_field(i, kind, "m2", &r.m2));
                    out.push(mat_field(i, kind, "m1_inv", &r.m1_inv));
                    out.push(mat_field(i, kind, "m2_inv", &r.m2_inv));
                    out.push(mat_field(i, kind, "r2", &r.r2));
                }
                BlockMaterials::Gelu(g) => {
                    out.push(mat_field(i, kind, "m1", &g.m1));
                    out.push(mat_field(i, kind, "m2", &g.m2));
                    out.push(mat_field(i, kind, "m3", &g.m3));
                    out.push(mat_field(i, kind, "m4", &g.m4));
                    out.push(mat_field(i, kind, "r2", &g.r2));
                }
                BlockMaterials::Norm(n) => {
                    out.push(mat_field(i, kind, "gadget", &n.gadget));
                    out.push(NamedTensor {
                        block: i,
                        kind,
                        field: "eps",
                        dims: vec![1],
                        data: std::slice::from_ref(&n.eps),
                    });
                    out.push(mat_field(i, kind, "affine_w", &n.affine_w));
                    out.push(mat_field(i, kind, "affine_b", &n.affine_b));
                }
                BlockMaterials::Attention(a) => {
                    if let Some(c) = &a.causal {
                        out.push(mat_field(i, kind, "causal", c));
                    }
                }
            }
        }
        out
    }
}

impl<T: Scalar> ObfBundle<T> {
    pub fn kinds(&self) -> Vec<LayerKind> {
        self.weights.blocks.iter().map(ObfBlock::kind).collect()
    }

    /// All tensor fields, reusable weights first.
    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = self.weights.tensors();
        if let Some(otp) = &self.otp {
            out.extend(otp.tensors(&self.kinds()));
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum::<usize>() * T::PRECISION.bytes()
    }

    /// Checks that weights and materials line up block by block.
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        match &self.otp {
            Some(otp) => check_pairing(&self.weights, otp),
            None => Ok(()),
        }
    }
}

impl<T> ObfWeights<T> {
    pub fn validate(&self) -> Result<()> {
        if self.tags.len() != self.blocks.len() + 1 {
            return Err(Error::Format(format!(
                "{} tags for {} blocks",
                self.tags.len(),
                self.blocks.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_pairing<T>(w: &ObfWeights<T>, otp: &OtpMaterials<T>) -> Result<()> {
    if otp.blocks.len() != w.blocks.len() {
        return Err(Error::Format(format!(
            "{} material entries for {} blocks",
            otp.blocks.len(),
            w.blocks.len()
        )));
    }
    for (i, (b, m)) in w.blocks.iter().zip(&otp.blocks).enumerate() {
        let ok = matches!(
            (b, m),
            (
                ObfBlock::Dense { .. } | ObfBlock::Conv { .. },
                BlockMaterials::Linear(_)
            ) | (ObfBlock::Relu, BlockMaterials::Relu(_))
                | (ObfBlock::Gelu, BlockMaterials::Gelu(_))
                | (ObfBlock::LayerNorm { .. }, BlockMaterials::Norm(_))
                | (ObfBlock::Mha { .. }, BlockMaterials::Attention(_))
                | (
                    ObfBlock::AvgPool { .. } | ObfBlock::Flatten | ObfBlock::Residual { .. },
                    BlockMaterials::None
                )
        );
        if !ok {
            return Err(Error::Format(format!(
                "block {i} ({}) has mismatched per-inference materials",
                b.kind()
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> ReluMaterials<T> {
    pub fn cast<U: Scalar>(&self) -> ReluMaterials<U> {
        ReluMaterials {
            m1: self.m1.cast(),
            m2: self.m2.cast(),
            m1_inv: self.m1_inv.cast(),
            m2_inv: self.m2_inv.cast(),
            r2: self.r2.cast(),
        }
    }
}

impl<T: Scalar> GeluMaterials<T> {
    pub fn cast<U: Scalar>(&self) -> GeluMaterials<U> {
        GeluMaterials {
            m1: self.m1.cast(),
            m2: self.m2.cast(),
            m3: self.m3.cast(),
            m4: self.m4.cast(),
            r2: self.r2.cast(),
        }
    }
}

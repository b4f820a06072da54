//! Simulated trusted world: owns every secret, obfuscates weights once, prepares one-time
//! materials per inference and guards the two boundary crossings.

mod audit;
pub mod nonlinear;
mod plan;
mod session;

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

pub use audit::{AuditField, AuditReport};
pub use nonlinear::{gelu_materials, relu_materials, KronFactors, NonlinearPerms};
pub use session::{
    CrossingRecord, Direction, NonlinearSecrets, OtpSecrets, Session, CROSSING_LIMIT,
};

use crate::error::{Error, Result};
use crate::matcore::{
    block_diag_invertible, rand_invertible, rand_perm, rand_uniform, Invertible, Mat, Perm, Scalar,
    SeededRng, Tensor4, DEFAULT_COND_MAX,
};
use crate::refnet::ops::conv_linear;
use crate::refnet::{Act, Block, LayerKind, PlainModel, Shape};
use crate::runtime::{
    AttentionMaterials, BlockMaterials, LinearMaterials, NormMaterials, ObfBlock, ObfBundle,
    ObfWeights, OtpMaterials,
};
use plan::{ClassSource, MaskPlan};
use session::apply_masks;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnclaveConfig {
    /// Rejection threshold for sampled invertible masks (1-norm condition number).
    pub cond_max: f64,
    /// Side length of the Kronecker factors around nonlinear layers.
    pub kron_dim: usize,
    /// Condition-number ceiling for the positive Kronecker factors `R₁`, `R₃`.
    pub kron_cond_max: f64,
    /// Replace every mask, permutation and pad by the identity (or zero). For testing only.
    pub identity_masks: bool,
    /// Permit causal attention by shipping the permuted causal mask, which reveals the
    /// sequence permutation.
    pub insecure_causal: bool,
}

impl Default for EnclaveConfig {
    fn default() -> Self {
        EnclaveConfig {
            cond_max: DEFAULT_COND_MAX,
            kron_dim: 2,
            kron_cond_max: DEFAULT_KRON_COND_MAX,
            identity_masks: false,
            insecure_causal: false,
        }
    }
}

impl EnclaveConfig {
    pub fn identity() -> Self {
        EnclaveConfig {
            identity_masks: true,
            kron_dim: 1,
            ..EnclaveConfig::default()
        }
    }
}

/// Default ceiling for the Kronecker factors. They sit inside every nonlinear layer's
/// lift, so their conditioning multiplies into the rounding error of both masks.
pub const DEFAULT_KRON_COND_MAX: f64 = 1e2;

/// Reusable per-head masks of one attention layer, as block-diagonal matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMasks {
    /// `blockdiag(P_i)`: query/key head masks.
    pub qk: Invertible<f64>,
    /// `blockdiag(S_i)`: value head masks.
    pub v: Invertible<f64>,
}

/// Normalization gadget `G = λI + rᵀ·1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gadget {
    pub lambda: f64,
    pub r: Vec<f64>,
    pub g: Mat<f64>,
}

impl Gadget {
    pub fn new(lambda: f64, r: Vec<f64>) -> Self {
        let d = r.len();
        let g = Mat::from_fn(d, d, |a, b| if a == b { lambda + r[a] } else { r[a] });
        Gadget { lambda, r, g }
    }
}

/// Every reusable secret: column masks per mask class, attention head masks, gadgets.
#[derive(Debug, Clone, PartialEq)]
pub struct EnclaveState {
    pub seed: u64,
    pub col_masks: Vec<Invertible<f64>>,
    pub heads: Vec<Option<HeadMasks>>,
    pub gadgets: Vec<Option<Gadget>>,
}

/// Stream ids of the enclave's generator.
const WEIGHT_STREAM: u64 = 0;
const OTP_STREAM: u64 = 1;

pub struct Enclave<T> {
    model: PlainModel<f64>,
    config: EnclaveConfig,
    plan: MaskPlan,
    state: EnclaveState,
    weights: ObfWeights<T>,
    otp_rng: SeededRng,
    inferences: u64,
}

impl<T: Scalar> std::fmt::Debug for Enclave<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enclave")
            .field("blocks", &self.model.blocks().len())
            .field("config", &self.config)
            .field("inferences", &self.inferences)
            .finish_non_exhaustive()
    }
}

fn draw_invertible(
    n: usize,
    config: &EnclaveConfig,
    rng: &mut SeededRng,
) -> Result<Invertible<f64>> {
    if config.identity_masks {
        Ok(Invertible::identity(n))
    } else {
        rand_invertible(n, rng, config.cond_max)
    }
}

fn draw_perm(n: usize, config: &EnclaveConfig, rng: &mut SeededRng) -> Perm {
    if config.identity_masks {
        Perm::identity(n)
    } else {
        rand_perm(n, rng)
    }
}

/// `P · (1ᵀ b) · C`: a bias row lifted to a doubly masked matrix.
fn expanded_bias(p: &Mat<f64>, bias: &[f64], c: &Mat<f64>) -> Result<Mat<f64>> {
    let bc = Mat::row_vector(bias).matmul(c)?;
    let ones = Mat::filled(p.cols(), 1, 1.0);
    p.matmul(&ones)?.matmul(&bc)
}

/// Kernel hypermatrix masking: `W̃[k', l'] = Σ C_out[k, k'] W[k, l] C_in⁻¹[l', l]`, so that
/// masked convolution of a masked input yields the masked output.
fn mask_kernels(
    k: &Tensor4<f64>,
    c_in: &Invertible<f64>,
    c_out: &Invertible<f64>,
) -> Result<Tensor4<f64>> {
    let [o, i, kh, kw] = k.dims();
    let kk = kh * kw;
    let flat = Mat::new(o, i * kk, k.as_slice().to_vec())?;
    let mixed = c_out.mat().transpose().matmul(&flat)?;
    let mut data = Vec::with_capacity(k.len());
    for r in 0..o {
        let block = Mat::new(i, kk, mixed.row(r).to_vec())?;
        data.extend(c_in.inv().matmul(&block)?.into_vec());
    }
    Tensor4::new([o, i, kh, kw], data)
}

impl<T: Scalar> Enclave<T> {
    /// Draws the reusable masks and obfuscates every weight. Batch normalization must already
    /// be fused.
    pub fn new(model: &PlainModel<T>, config: EnclaveConfig, seed: u64) -> Result<Self> {
        if config.kron_dim == 0 || (config.identity_masks && config.kron_dim != 1) {
            return Err(Error::InvalidArgument(
                "kron_dim must be >= 1, and 1 with identity masks".into(),
            ));
        }
        let model = model.cast::<f64>();
        let plan = MaskPlan::new(&model)?;
        let mut rng = SeededRng::with_stream(seed, WEIGHT_STREAM);
        let state = Self::draw_state(&model, &plan, &config, seed, &mut rng)?;
        let weights = Self::obfuscate(&model, &plan, &state)?;
        Ok(Enclave {
            model,
            config,
            plan,
            state,
            weights,
            otp_rng: SeededRng::with_stream(seed, OTP_STREAM),
            inferences: 0,
        })
    }

    fn draw_state(
        model: &PlainModel<f64>,
        plan: &MaskPlan,
        config: &EnclaveConfig,
        seed: u64,
        rng: &mut SeededRng,
    ) -> Result<EnclaveState> {
        let mut col_masks: Vec<Invertible<f64>> = Vec::with_capacity(plan.classes.len());
        for c in &plan.classes {
            let m = match *c {
                ClassSource::Random { dim } => draw_invertible(dim, config, rng)?,
                ClassSource::Derived { from, hw } => {
                    col_masks[from].kron(&Invertible::identity(hw))?
                }
            };
            col_masks.push(m);
        }
        let mut heads = Vec::new();
        let mut gadgets = Vec::new();
        for b in model.blocks() {
            heads.push(match b {
                Block::Mha(m) => {
                    if m.causal && !config.insecure_causal {
                        return Err(Error::Unsupported(
                            "causal attention leaks the sequence permutation; enable insecure_causal".into(),
                        ));
                    }
                    let d = m.head_dim();
                    let qk = (0..m.heads)
                        .map(|_| draw_invertible(d, config, rng))
                        .collect::<Result<Vec<_>>>()?;
                    let v = (0..m.heads)
                        .map(|_| draw_invertible(d, config, rng))
                        .collect::<Result<Vec<_>>>()?;
                    Some(HeadMasks {
                        qk: block_diag_invertible(&qk)?,
                        v: block_diag_invertible(&v)?,
                    })
                }
                _ => None,
            });
            gadgets.push(match b {
                Block::LayerNorm(l) => Some(if config.identity_masks {
                    Gadget::new(1.0, vec![0.0; l.dim()])
                } else {
                    let lambda = rng.uniform(0.5, 2.0);
                    let r = (0..l.dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
                    Gadget::new(lambda, r)
                }),
                _ => None,
            });
        }
        Ok(EnclaveState {
            seed,
            col_masks,
            heads,
            gadgets,
        })
    }

    fn obfuscate(
        model: &PlainModel<f64>,
        plan: &MaskPlan,
        state: &EnclaveState,
    ) -> Result<ObfWeights<T>> {
        let mask = |j: usize| &state.col_masks[plan.act_class[j]];
        let mut blocks = Vec::with_capacity(model.blocks().len());
        for (i, b) in model.blocks().iter().enumerate() {
            let (c_in, c_out) = (mask(i), mask(i + 1));
            let ob = match b {
                Block::Dense(d) => ObfBlock::Dense {
                    w: c_in
                        .inv()
                        .matmul(&d.weight.transpose())?
                        .matmul(c_out.mat())?
                        .cast(),
                },
                Block::Conv(c) => ObfBlock::Conv {
                    kernels: mask_kernels(&c.kernels, c_in, c_out)?.cast(),
                    stride: c.stride,
                    padding: c.padding,
                },
                Block::AvgPool { k } => ObfBlock::AvgPool { k: *k },
                Block::Flatten => ObfBlock::Flatten,
                Block::Relu => ObfBlock::Relu,
                Block::Gelu => ObfBlock::Gelu,
                Block::Mha(m) => {
                    let h = state.heads[i]
                        .as_ref()
                        .expect("head masks drawn for attention");
                    let n_inv = c_in.inv();
                    ObfBlock::Mha {
                        wq: n_inv.matmul(&m.wq)?.matmul(&h.qk.mat().transpose())?.cast(),
                        wk: n_inv.matmul(&m.wk)?.matmul(h.qk.inv())?.cast(),
                        wv: n_inv.matmul(&m.wv)?.matmul(h.v.mat())?.cast(),
                        wo: h.v.inv().matmul(&m.wo)?.matmul(c_out.mat())?.cast(),
                        heads: m.heads,
                    }
                }
                Block::LayerNorm(l) => ObfBlock::LayerNorm { dim: l.dim() },
                Block::Residual { from } => ObfBlock::Residual { from: *from },
                Block::BatchNorm(_) => unreachable!("rejected by the mask plan"),
            };
            blocks.push(ob);
        }
        Ok(ObfWeights {
            input: model.input_shape(),
            tags: plan.tags(),
            blocks,
        })
    }

    pub fn config(&self) -> &EnclaveConfig {
        &self.config
    }

    /// The fused plaintext model held inside the enclave.
    pub fn model(&self) -> &PlainModel<f64> {
        &self.model
    }

    pub fn state(&self) -> &EnclaveState {
        &self.state
    }

    /// Public reusable weights; identical for every inference.
    pub fn weights(&self) -> &ObfWeights<T> {
        &self.weights
    }

    pub fn inferences(&self) -> u64 {
        self.inferences
    }

    pub fn bundle(&self, otp: Option<OtpMaterials<T>>) -> ObfBundle<T> {
        ObfBundle {
            weights: self.weights.clone(),
            otp,
        }
    }

    /// Advances the one-time stream so the next inference has index `next`. Used when
    /// rebuilding an enclave from exported state; the stream never rewinds.
    pub fn resume_at(&mut self, next: u64) -> Result<()> {
        if next < self.inferences {
            return Err(Error::InvalidArgument(format!(
                "cannot rewind from inference {} to {next}",
                self.inferences
            )));
        }
        while self.inferences < next {
            self.otp_rng.fork();
            self.inferences += 1;
        }
        Ok(())
    }

    /// Column mask of activation `j`.
    pub fn col_mask(&self, j: usize) -> &Invertible<f64> {
        &self.state.col_masks[self.plan.act_class[j]]
    }

    /// Fresh one-time secrets and the matching public materials, from the enclave's own stream.
    pub fn prepare_inference(&mut self) -> Result<(Session<T>, OtpMaterials<T>)> {
        let mut rng = self.otp_rng.fork();
        self.prepare_inference_with(&mut rng)
    }

    /// As [`Enclave::prepare_inference`], drawing from `rng`.
    pub fn prepare_inference_with(
        &mut self,
        rng: &mut SeededRng,
    ) -> Result<(Session<T>, OtpMaterials<T>)> {
        let config = self.config;
        let shapes = self.model.shapes()?;
        let rows = self.model.input_shape().rows();
        let (p, p_perm) = if self.plan.row_perm {
            let perm = draw_perm(rows, &config, rng);
            (Invertible::from_perm(&perm), Some(perm))
        } else {
            (draw_invertible(rows, &config, rng)?, None)
        };
        let input = self.model.input_shape();
        let t = if config.identity_masks {
            Act::zeros(input)
        } else {
            Act::from_vec(
                input,
                rand_uniform(1, input.len(), -1.0, 1.0, rng).into_vec(),
            )?
        };

        let n_blocks = self.model.blocks().len();
        let mut nonlinear = vec![None; n_blocks];
        let mut norm_perms = vec![None; n_blocks];
        let mut mats = Vec::with_capacity(n_blocks);
        for (i, b) in self.model.blocks().iter().enumerate() {
            let (c_in, c_out) = (self.col_mask(i), self.col_mask(i + 1));
            let m = match b {
                Block::Dense(d) => {
                    let pad = if i == 0 {
                        let tm = t.as_mat()?;
                        Some(Act::Mat(
                            p.mat()
                                .matmul(&tm.matmul(&d.weight.transpose())?)?
                                .matmul(c_out.mat())?,
                        ))
                    } else {
                        None
                    };
                    BlockMaterials::Linear(LinearMaterials {
                        bias: expanded_bias(p.mat(), &d.bias, c_out.mat())?.cast(),
                        pad: pad.map(|a| a.cast()),
                    })
                }
                Block::Conv(c) => {
                    let pad = if i == 0 {
                        let y = conv_linear(t.as_t4()?, &c.kernels, c.stride, c.padding)?;
                        Some(Act::T4(y.mix(p.mat(), c_out.mat())?))
                    } else {
                        None
                    };
                    BlockMaterials::Linear(LinearMaterials {
                        bias: expanded_bias(p.mat(), &c.bias, c_out.mat())?.cast(),
                        pad: pad.map(|a| a.cast()),
                    })
                }
                Block::Relu | Block::Gelu => {
                    let q_eff = match shapes[i] {
                        Shape::Mat { .. } => c_in.clone(),
                        Shape::T4 { dims } => {
                            c_in.kron(&Invertible::identity(dims[2] * dims[3]))?
                        }
                    };
                    let r = config.kron_dim;
                    let (perms, factors) = if config.identity_masks {
                        (
                            NonlinearPerms::identity(rows, q_eff.size(), r),
                            KronFactors::unit(),
                        )
                    } else {
                        (
                            NonlinearPerms::random(rows, q_eff.size(), r, rng),
                            KronFactors::random(r, rng, config.kron_cond_max)?,
                        )
                    };
                    let (materials, factors, unit) = if b.kind() == LayerKind::Relu {
                        let m = relu_materials(&p, &q_eff, &factors, &perms)?;
                        (BlockMaterials::Relu(m.cast()), factors, None)
                    } else {
                        let unit = (rng.index(r), rng.index(r));
                        let factors = factors.with_unit_at(unit.0, unit.1)?;
                        let m = gelu_materials(&p, &q_eff, &factors, &perms, unit)?;
                        (BlockMaterials::Gelu(m.cast()), factors, Some(unit))
                    };
                    nonlinear[i] = Some(NonlinearSecrets {
                        perms,
                        factors,
                        unit,
                    });
                    materials
                }
                Block::LayerNorm(l) => {
                    let g = self.state.gadgets[i]
                        .as_ref()
                        .expect("gadget drawn for normalization");
                    let pi2 = draw_perm(l.dim(), &config, rng);
                    let gadget = pi2.permute_cols(&c_in.inv().matmul(&g.g)?)?;
                    let affine_w = pi2
                        .inverse()
                        .permute_rows(&Mat::diag(&l.gamma))?
                        .matmul(c_out.mat())?;
                    let m = NormMaterials {
                        gadget: gadget.cast(),
                        eps: T::from_f64(l.eps * g.lambda * g.lambda),
                        affine_w: affine_w.cast(),
                        affine_b: expanded_bias(p.mat(), &l.beta, c_out.mat())?.cast(),
                    };
                    norm_perms[i] = Some(pi2);
                    BlockMaterials::Norm(m)
                }
                Block::Mha(m) => {
                    let causal = if m.causal {
                        let perm = p_perm
                            .as_ref()
                            .expect("attention forces a permutation row mask");
                        let map = perm.map();
                        Some(Mat::from_fn(rows, rows, |a, b| {
                            if map[b] <= map[a] {
                                T::ONE
                            } else {
                                T::ZERO
                            }
                        }))
                    } else {
                        None
                    };
                    BlockMaterials::Attention(AttentionMaterials { causal })
                }
                Block::AvgPool { .. } | Block::Flatten | Block::Residual { .. } => {
                    BlockMaterials::None
                }
                Block::BatchNorm(_) => unreachable!("rejected by the mask plan"),
            };
            mats.push(m);
        }

        let inference = self.inferences;
        self.inferences += 1;
        let tags = self.plan.tags();
        let session = Session {
            inference,
            crossings: 0,
            secrets: OtpSecrets {
                p,
                p_perm,
                t,
                nonlinear,
                norm_perms,
            },
            in_mask: self.col_mask(0).clone(),
            out_mask: self.col_mask(n_blocks).clone(),
            in_tag: tags[0],
            out_tag: tags[n_blocks],
            log: Vec::new(),
            _precision: PhantomData,
        };
        Ok((
            session,
            OtpMaterials {
                inference,
                blocks: mats,
            },
        ))
    }

    /// Removes the masks of activation `j` of `session`'s inference. Measurement instrument
    /// for equivalence and error studies; not part of the protocol and not a crossing.
    pub fn audit_unmask(&self, session: &Session<T>, j: usize, act: &Act<T>) -> Result<Act<f64>> {
        if j >= self.plan.act_class.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                size: self.plan.act_class.len(),
            });
        }
        let a = act.cast::<f64>();
        if j == 0 {
            // The input is masked around `X − T`.
            let centered = apply_masks(&a, session.secrets.p.inv(), self.col_mask(0).inv())?;
            return centered.add(&session.secrets.t);
        }
        apply_masks(&a, session.secrets.p.inv(), self.col_mask(j).inv())
    }
}

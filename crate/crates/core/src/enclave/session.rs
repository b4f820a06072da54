use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::enclave::nonlinear::{KronFactors, NonlinearPerms};
use crate::error::{Error, Result};
use crate::matcore::{Invertible, Perm, Scalar};
use crate::refnet::{Act, Shape};
use crate::runtime::{MaskTag, MaskedAct};

/// Crossings allowed per inference: one in, one out.
pub const CROSSING_LIMIT: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Masked input leaving the enclave.
    Out,
    /// Masked output entering the enclave.
    In,
}

/// What crossed the boundary, for the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub direction: Direction,
    pub shape: Shape,
    pub bytes: usize,
}

/// Secret one-time material of a nonlinear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSecrets {
    pub perms: NonlinearPerms,
    pub factors: KronFactors,
    pub unit: Option<(usize, usize)>,
}

/// Secret one-time material of one inference.
#[derive(Debug, Clone, PartialEq)]
pub struct OtpSecrets {
    pub p: Invertible<f64>,
    pub p_perm: Option<Perm>,
    pub t: Act<f64>,
    pub nonlinear: Vec<Option<NonlinearSecrets>>,
    pub norm_perms: Vec<Option<Perm>>,
}

/// One inference's enclave-side state. Masks the input (crossing 1) and turns the masked
/// output into labels (crossing 2); anything further is refused.
#[derive(Debug)]
pub struct Session<T> {
    pub(crate) inference: u64,
    pub(crate) crossings: u32,
    pub(crate) secrets: OtpSecrets,
    pub(crate) in_mask: Invertible<f64>,
    pub(crate) out_mask: Invertible<f64>,
    pub(crate) in_tag: MaskTag,
    pub(crate) out_tag: MaskTag,
    pub(crate) log: Vec<CrossingRecord>,
    pub(crate) _precision: PhantomData<T>,
}

fn crossing_name(i: u32) -> &'static str {
    match i {
        0 => "mask_input",
        1 => "unmask_output",
        _ => "none",
    }
}

/// `P · A · Q` for matrices, sample/channel mixing for 4-D tensors.
pub(crate) fn apply_masks(
    a: &Act<f64>,
    left: &crate::Mat<f64>,
    right: &crate::Mat<f64>,
) -> Result<Act<f64>> {
    Ok(match a {
        Act::Mat(m) => Act::Mat(left.matmul(m)?.matmul(right)?),
        Act::T4(t) => Act::T4(t.mix(left, right)?),
    })
}

impl<T: Scalar> Session<T> {
    pub fn inference(&self) -> u64 {
        self.inference
    }

    pub fn crossings(&self) -> u32 {
        self.crossings
    }

    pub fn log(&self) -> &[CrossingRecord] {
        &self.log
    }

    pub fn secrets(&self) -> &OtpSecrets {
        &self.secrets
    }

    fn begin(&mut self, got: u32) -> Result<()> {
        if self.crossings >= CROSSING_LIMIT {
            return Err(Error::CrossingBudget {
                attempted: self.crossings + 1,
            });
        }
        if self.crossings != got {
            return Err(Error::CrossingOrder {
                expected: crossing_name(self.crossings),
                got: crossing_name(got),
            });
        }
        self.crossings += 1;
        Ok(())
    }

    /// Crossing 1: returns `X̃ = P·(X − T)·Q₀`.
    pub fn mask_input(&mut self, x: &Act<T>) -> Result<MaskedAct<T>> {
        if x.shape() != self.secrets.t.shape() {
            return Err(Error::shape(
                "mask_input",
                format!("input {} vs expected {}", x.shape(), self.secrets.t.shape()),
            ));
        }
        self.begin(0)?;
        let centered = x.cast::<f64>().sub(&self.secrets.t)?;
        let masked = apply_masks(&centered, self.secrets.p.mat(), self.in_mask.mat())?.cast::<T>();
        self.log.push(CrossingRecord {
            direction: Direction::Out,
            shape: masked.shape(),
            bytes: masked.shape().len() * T::PRECISION.bytes(),
        });
        Ok(MaskedAct {
            act: masked,
            tag: self.in_tag,
        })
    }

    /// Crossing 2: unmasks `ỹ = P·Y·Qₙ` and returns only the per-row argmax (ties go to the
    /// lowest index).
    pub fn unmask_output(&mut self, y: &MaskedAct<T>) -> Result<Vec<usize>> {
        self.begin(1)?;
        self.log.push(CrossingRecord {
            direction: Direction::In,
            shape: y.act.shape(),
            bytes: y.act.shape().len() * T::PRECISION.bytes(),
        });
        if y.tag != self.out_tag {
            return Err(Error::MaskTag(format!(
                "output carries {}, session expects {}",
                y.tag, self.out_tag
            )));
        }
        if !y.act.all_finite() {
            return Err(Error::NonFinite("masked output"));
        }
        let plain = apply_masks(
            &y.act.cast::<f64>(),
            self.secrets.p.inv(),
            self.out_mask.inv(),
        )?;
        if !plain.all_finite() {
            return Err(Error::NonFinite("unmasked output"));
        }
        Ok(plain.to_rows().argmax_rows())
    }
}

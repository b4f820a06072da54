use serde::{Deserialize, Serialize};

use crate::enclave::{Enclave, Session};
use crate::matcore::{Mat, Scalar};
use crate::refnet::LayerKind;
use crate::runtime::{ObfWeights, OtpMaterials};

/// One bundle field as seen by the audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditField {
    pub name: String,
    pub kind: LayerKind,
    pub dims: Vec<usize>,
    pub allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub fields: Vec<AuditField>,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Fields the untrusted side may observe, per layer kind.
fn allowed(kind: LayerKind, field: &str) -> bool {
    let list: &[&str] = match kind {
        LayerKind::Dense => &["w", "bias", "pad"],
        LayerKind::Conv => &["kernels", "bias", "pad"],
        LayerKind::Relu => &["m1", "m2", "m1_inv", "m2_inv", "r2"],
        LayerKind::Gelu => &["m1", "m2", "m3", "m4", "r2"],
        LayerKind::Mha => &["wq", "wk", "wv", "wo"],
        LayerKind::LayerNorm => &["gadget", "eps", "affine_w", "affine_b"],
        _ => &[],
    };
    list.contains(&field)
}

/// Relative closeness used to decide that a bundle field reproduces a secret.
const SECRET_MATCH_TOL: f64 = 1e-9;

fn same(data: &[f64], secret: &Mat<f64>) -> bool {
    let scale = secret.max_abs().max(1e-300);
    data.iter()
        .zip(secret.as_slice())
        .all(|(a, b)| (a - b).abs() <= SECRET_MATCH_TOL * scale)
}

impl<T: Scalar> Enclave<T> {
    fn secret_matrices(&self, session: &Session<T>) -> Vec<(String, Mat<f64>)> {
        let mut out = Vec::new();
        let s = &session.secrets;
        out.push(("P".to_string(), s.p.mat().clone()));
        out.push(("P^-1".to_string(), s.p.inv().clone()));
        for (i, q) in self.state.col_masks.iter().enumerate() {
            out.push((format!("Q[{i}]"), q.mat().clone()));
            out.push((format!("Q[{i}]^-1"), q.inv().clone()));
        }
        for (i, h) in self.state.heads.iter().enumerate() {
            if let Some(h) = h {
                out.push((format!("head qk mask of block {i}"), h.qk.mat().clone()));
                out.push((format!("head v mask of block {i}"), h.v.mat().clone()));
                out.push((
                    format!("head v mask inverse of block {i}"),
                    h.v.inv().clone(),
                ));
            }
        }
        for (i, g) in self.state.gadgets.iter().enumerate() {
            if let Some(g) = g {
                out.push((format!("gadget of block {i}"), g.g.clone()));
            }
        }
        for (i, n) in s.nonlinear.iter().enumerate() {
            if let Some(n) = n {
                let p = &n.perms;
                for (name, perm) in [
                    ("pi1", &p.pi1),
                    ("pi2", &p.pi2),
                    ("pi3", &p.pi3),
                    ("pi4", &p.pi4),
                ] {
                    out.push((format!("{name} of block {i}"), perm.matrix()));
                }
                out.push((format!("R1 of block {i}"), n.factors.r1.mat().clone()));
                out.push((format!("R3 of block {i}"), n.factors.r3.mat().clone()));
            }
        }
        for (i, p) in s.norm_perms.iter().enumerate() {
            if let Some(p) = p {
                out.push((format!("pi2 of block {i}"), p.matrix()));
            }
        }
        out
    }

    /// Enumerates every bundle field against the allow-list and checks that no field
    /// reproduces an individual secret mask. Identity-mask configurations fail by design.
    pub fn audit(
        &self,
        session: &Session<T>,
        weights: &ObfWeights<T>,
        otp: &OtpMaterials<T>,
    ) -> AuditReport {
        let kinds: Vec<LayerKind> = weights.blocks.iter().map(|b| b.kind()).collect();
        let mut tensors = weights.tensors();
        tensors.extend(otp.tensors(&kinds));
        let secrets = self.secret_matrices(session);
        let mut fields = Vec::new();
        let mut violations = Vec::new();
        for t in &tensors {
            let ok = allowed(t.kind, t.field);
            if !ok {
                violations.push(format!(
                    "{} ({}) is not an observable field",
                    t.name(),
                    t.kind
                ));
            }
            if t.field == "causal" {
                violations.push(format!("{} reveals the sequence permutation", t.name()));
            }
            if t.dims.len() == 2 && t.dims[0] == t.dims[1] && t.dims[0] > 1 {
                let data: Vec<f64> = t.data.iter().map(|x| x.to_f64()).collect();
                for (name, m) in &secrets {
                    if m.shape() == (t.dims[0], t.dims[1]) && same(&data, m) {
                        violations.push(format!("{} equals secret {name}", t.name()));
                    }
                }
            }
            fields.push(AuditField {
                name: t.name(),
                kind: t.kind,
                dims: t.dims.clone(),
                allowed: ok,
            });
        }
        AuditReport { fields, violations }
    }
}

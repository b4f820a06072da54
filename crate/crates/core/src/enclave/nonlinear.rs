//! Builders for the per-inference materials of masked ReLU and GELU layers.

use crate::error::{Error, Result};
use crate::matcore::{
    kron, rand_perm, rand_positive, rand_positive_invertible, selection_pair, Invertible, Mat,
    Perm, SeededRng,
};
use crate::runtime::{GeluMaterials, ReluMaterials};

/// Positive Kronecker factors `R₁, R₂, R₃`; their product `R̄ = R₁R₂R₃` scales every block.
#[derive(Debug, Clone, PartialEq)]
pub struct KronFactors {
    pub r1: Invertible<f64>,
    pub r2: Mat<f64>,
    pub r3: Invertible<f64>,
}

impl KronFactors {
    pub fn random(r: usize, rng: &mut SeededRng, cond_max: f64) -> Result<Self> {
        Ok(KronFactors {
            r1: rand_positive_invertible(r, rng, cond_max)?,
            r2: rand_positive(r, r, rng),
            r3: rand_positive_invertible(r, rng, cond_max)?,
        })
    }

    /// All three factors equal to `[1]`.
    pub fn unit() -> Self {
        KronFactors {
            r1: Invertible::identity(1),
            r2: Mat::identity(1),
            r3: Invertible::identity(1),
        }
    }

    pub fn size(&self) -> usize {
        self.r2.rows()
    }

    pub fn product(&self) -> Mat<f64> {
        self.r1
            .mat()
            .matmul(&self.r2)
            .and_then(|m| m.matmul(self.r3.mat()))
            .expect("factors are square and equal-sized")
    }

    /// Multiplies `R₁` by a positive constant, scaling `R̄` by the same amount.
    pub fn scale_r1(&self, c: f64) -> Self {
        let r1 = Invertible::from_parts(self.r1.mat().scale(c), self.r1.inv().scale(1.0 / c));
        KronFactors {
            r1,
            r2: self.r2.clone(),
            r3: self.r3.clone(),
        }
    }

    /// Rescales `R₁` so that `R̄[s0, t0] = 1`, exactly when rounding allows.
    pub fn with_unit_at(&self, s0: usize, t0: usize) -> Result<Self> {
        let r = self.size();
        if s0 >= r || t0 >= r {
            return Err(Error::IndexOutOfRange {
                index: s0.max(t0),
                size: r,
            });
        }
        let v = self.product()[(s0, t0)];
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(
                "kronecker factors are not positive".into(),
            ));
        }
        let f = self.scale_r1(1.0 / v);
        // The product re-rounds, so search the representable multipliers next to 1. When the
        // rounding steps over 1 entirely, the closest candidate is within a few ulps.
        let mut best = (f64::INFINITY, f.clone());
        for j in 0..=UNIT_SEARCH {
            for c in [
                1.0 + j as f64 * f64::EPSILON,
                1.0 - j as f64 * f64::EPSILON / 2.0,
            ] {
                let g = f.scale_r1(c);
                let miss = (g.product()[(s0, t0)] - 1.0).abs();
                if miss == 0.0 {
                    return Ok(g);
                }
                if miss < best.0 {
                    best = (miss, g);
                }
            }
        }
        if best.0 <= UNIT_SLACK * f64::EPSILON {
            Ok(best.1)
        } else {
            Err(Error::InvalidArgument(format!(
                "no rescaling puts 1 at ({s0}, {t0}); closest misses by {:e}",
                best.0
            )))
        }
    }
}

const UNIT_SEARCH: i32 = 64;
/// Largest accepted miss of the unit entry, in units of machine epsilon.
const UNIT_SLACK: f64 = 4.0;

/// The four permutations `π₁ (n), π₂ (m), π₃ (n·r), π₄ (m·r)` of one nonlinear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearPerms {
    pub pi1: Perm,
    pub pi2: Perm,
    pub pi3: Perm,
    pub pi4: Perm,
}

impl NonlinearPerms {
    pub fn random(n: usize, m: usize, r: usize, rng: &mut SeededRng) -> Self {
        NonlinearPerms {
            pi1: rand_perm(n, rng),
            pi2: rand_perm(m, rng),
            pi3: rand_perm(n * r, rng),
            pi4: rand_perm(m * r, rng),
        }
    }

    pub fn identity(n: usize, m: usize, r: usize) -> Self {
        NonlinearPerms {
            pi1: Perm::identity(n),
            pi2: Perm::identity(m),
            pi3: Perm::identity(n * r),
            pi4: Perm::identity(m * r),
        }
    }
}

fn check_sizes(
    p: &Invertible<f64>,
    q: &Invertible<f64>,
    f: &KronFactors,
    perms: &NonlinearPerms,
) -> Result<()> {
    let (n, m, r) = (p.size(), q.size(), f.size());
    let ok = perms.pi1.size() == n
        && perms.pi2.size() == m
        && perms.pi3.size() == n * r
        && perms.pi4.size() == m * r
        && f.r1.size() == r
        && f.r3.size() == r
        && f.r2.is_square();
    if ok {
        Ok(())
    } else {
        Err(Error::shape(
            "nonlinear materials",
            format!("row mask {n}, column mask {m}, factors {r}: permutation sizes disagree"),
        ))
    }
}

/// `M₁ = π₃(π₁P⁻¹ ⊗ R₁)` and `M₂ = (Q⁻¹π₂ ⊗ R₃)π₄`.
fn lift_masks(
    p: &Invertible<f64>,
    q: &Invertible<f64>,
    f: &KronFactors,
    perms: &NonlinearPerms,
) -> Result<(Mat<f64>, Mat<f64>)> {
    let m1 = perms
        .pi3
        .permute_rows(&kron(&perms.pi1.permute_rows(p.inv())?, f.r1.mat())?)?;
    let m2 = perms
        .pi4
        .permute_cols(&kron(&perms.pi2.permute_cols(q.inv())?, f.r3.mat())?)?;
    Ok((m1, m2))
}

/// Materials turning `P·X·Q` into `P·ReLU(X)·Q`.
pub fn relu_materials(
    p: &Invertible<f64>,
    q: &Invertible<f64>,
    f: &KronFactors,
    perms: &NonlinearPerms,
) -> Result<ReluMaterials<f64>> {
    check_sizes(p, q, f, perms)?;
    let (m1, m2) = lift_masks(p, q, f, perms)?;
    // M₁⁻¹ = (Pπ₁ᵀ ⊗ R₁⁻¹)π₃ᵀ and M₂⁻¹ = π₄ᵀ(π₂ᵀQ ⊗ R₃⁻¹), assembled from stored inverses.
    let m1_inv = perms.pi3.inverse().permute_cols(&kron(
        &perms.pi1.inverse().permute_cols(p.mat())?,
        f.r1.inv(),
    )?)?;
    let m2_inv = perms.pi4.inverse().permute_rows(&kron(
        &perms.pi2.inverse().permute_rows(q.mat())?,
        f.r3.inv(),
    )?)?;
    Ok(ReluMaterials {
        m1,
        m2,
        m1_inv,
        m2_inv,
        r2: f.r2.clone(),
    })
}

/// Materials turning `P·X·Q` into `P·GELU(X)·Q`. `f` must already satisfy `R̄[s0, t0] = 1`
/// (see [`KronFactors::with_unit_at`]); any other value scales the selected block.
pub fn gelu_materials(
    p: &Invertible<f64>,
    q: &Invertible<f64>,
    f: &KronFactors,
    perms: &NonlinearPerms,
    unit: (usize, usize),
) -> Result<GeluMaterials<f64>> {
    check_sizes(p, q, f, perms)?;
    let (n, m, r) = (p.size(), q.size(), f.size());
    let (m1, m2) = lift_masks(p, q, f, perms)?;
    let (e1, e2) = selection_pair::<f64>(n, r, m, r, unit.0, unit.1)?;
    // M₃ = Pπ₁ᵀE₁π₃ᵀ and M₄ = π₄ᵀE₂π₂ᵀQ.
    let m3 = perms
        .pi3
        .inverse()
        .permute_cols(&perms.pi1.inverse().permute_cols(p.mat())?.matmul(&e1)?)?;
    let m4 = perms
        .pi4
        .inverse()
        .permute_rows(&e2.matmul(&perms.pi2.inverse().permute_rows(q.mat())?)?)?;
    Ok(GeluMaterials {
        m1,
        m2,
        m3,
        m4,
        r2: f.r2.clone(),
    })
}

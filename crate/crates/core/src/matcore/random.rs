use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matcore::linalg::{cond_1, identity_residual, inverse};
use crate::matcore::{kron, Mat, Perm, Scalar, SeededRng};

/// Default ceiling on the 1-norm condition number of sampled masks.
pub const DEFAULT_COND_MAX: f64 = 1e6;

/// Largest tolerated `max |A·A⁻¹ - I|` for a sampled mask.
pub const INVERSE_RESIDUAL_TOL: f64 = 1e-9;

const MAX_ATTEMPTS: usize = 256;

/// A square matrix stored together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Invertible<T> {
    mat: Mat<T>,
    inv: Mat<T>,
}

impl<T: Scalar> Invertible<T> {
    pub fn identity(n: usize) -> Self {
        Invertible {
            mat: Mat::identity(n),
            inv: Mat::identity(n),
        }
    }

    /// Inverts `mat` and checks the residual.
    pub fn from_mat(mat: Mat<T>) -> Result<Self> {
        let inv = inverse(&mat)?;
        Ok(Invertible { mat, inv })
    }

    /// Pairs a matrix with a known inverse without re-deriving it.
    pub(crate) fn from_parts(mat: Mat<T>, inv: Mat<T>) -> Self {
        debug_assert_eq!(mat.shape(), inv.shape());
        Invertible { mat, inv }
    }

    pub fn from_perm(p: &Perm) -> Self {
        Invertible {
            mat: p.matrix(),
            inv: p.inverse().matrix(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Invertible {
            mat: Mat::filled(1, 1, value),
            inv: Mat::filled(1, 1, T::ONE / value),
        }
    }

    pub fn mat(&self) -> &Mat<T> {
        &self.mat
    }

    pub fn inv(&self) -> &Mat<T> {
        &self.inv
    }

    pub fn size(&self) -> usize {
        self.mat.rows()
    }

    /// `(A ⊗ B, A⁻¹ ⊗ B⁻¹)`
    pub fn kron(&self, other: &Invertible<T>) -> Result<Self> {
        Ok(Invertible {
            mat: kron(&self.mat, &other.mat)?,
            inv: kron(&self.inv, &other.inv)?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Invertible<U> {
        Invertible {
            mat: self.mat.cast(),
            inv: self.inv.cast(),
        }
    }
}

pub fn rand_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.uniform(lo, hi))
}

/// Entries i.i.d. on `(-1, 1)`, rejection-sampled until the 1-norm condition number is at
/// most `cond_max` and the cached inverse reproduces the identity.
pub fn rand_invertible(n: usize, rng: &mut SeededRng, cond_max: f64) -> Result<Invertible<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("mask size must be >= 1".into()));
    }
    if !(cond_max > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cond_max must exceed 1, got {cond_max}"
        )));
    }
    for _ in 0..MAX_ATTEMPTS {
        let a = rand_uniform(n, n, -1.0, 1.0, rng);
        let Ok(inv) = inverse(&a) else { continue };
        if cond_1(&a, &inv) > cond_max {
            continue;
        }
        if identity_residual(&a, &inv)? > INVERSE_RESIDUAL_TOL {
            continue;
        }
        return Ok(Invertible { mat: a, inv });
    }
    Err(Error::RejectionExhausted {
        n,
        cond_max,
        attempts: MAX_ATTEMPTS,
    })
}

/// Uniformly random permutation (Fisher-Yates).
pub fn rand_perm(n: usize, rng: &mut SeededRng) -> Perm {
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng.inner());
    Perm::from_map(map).expect("shuffle yields a bijection")
}

/// Entries i.i.d. on `(0, 1)`.
pub fn rand_positive(rows: usize, cols: usize, rng: &mut SeededRng) -> Mat<f64> {
    rand_uniform(rows, cols, 0.0, 1.0, rng)
}

/// Positive square matrix that is also invertible within `cond_max`.
pub fn rand_positive_invertible(
    n: usize,
    rng: &mut SeededRng,
    cond_max: f64,
) -> Result<Invertible<f64>> {
    for _ in 0..MAX_ATTEMPTS {
        let a = rand_positive(n, n, rng);
        let Ok(inv) = inverse(&a) else { continue };
        if cond_1(&a, &inv) <= cond_max {
            return Ok(Invertible { mat: a, inv });
        }
    }
    Err(Error::RejectionExhausted {
        n,
        cond_max,
        attempts: MAX_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_is_nonzero_scalar() {
        let mut rng = SeededRng::new(5);
        let m = rand_invertible(1, &mut rng, DEFAULT_COND_MAX).unwrap();
        let v = m.mat()[(0, 0)];
        assert!(v != 0.0 && v > -1.0 && v < 1.0);
        assert!((m.inv()[(0, 0)] * v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn thousand_8x8_draws_invert() {
        let mut rng = SeededRng::new(11);
        for _ in 0..1000 {
            let m = rand_invertible(8, &mut rng, DEFAULT_COND_MAX).unwrap();
            assert!(identity_residual(m.mat(), m.inv()).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn acceptance_rate_at_64() {
        // Count raw draws against the same criterion rand_invertible applies.
        let mut rng = SeededRng::new(12);
        let mut accepted = 0;
        for _ in 0..1000 {
            let a = rand_uniform(64, 64, -1.0, 1.0, &mut rng);
            if let Ok(inv) = inverse(&a) {
                if cond_1(&a, &inv) <= DEFAULT_COND_MAX {
                    accepted += 1;
                }
            }
        }
        assert!(accepted > 990, "accepted {accepted}/1000");
    }

    #[test]
    fn too_strict_cond_reports_attempts() {
        let mut rng = SeededRng::new(1);
        match rand_invertible(16, &mut rng, 1.0001) {
            Err(Error::RejectionExhausted { attempts, .. }) => assert_eq!(attempts, MAX_ATTEMPTS),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perm_of_one_is_identity_and_seed_is_stable() {
        let mut rng = SeededRng::new(0);
        assert!(rand_perm(1, &mut rng).is_identity());
        let a = rand_perm(4, &mut SeededRng::new(99));
        let b = rand_perm(4, &mut SeededRng::new(99));
        assert_eq!(a, b);
    }

    #[test]
    fn positive_draws_and_products_stay_positive() {
        let mut rng = SeededRng::new(2);
        let s = rand_positive(1, 1, &mut rng)[(0, 0)];
        assert!(s > 0.0 && s < 1.0);
        for _ in 0..100 {
            let r1 = rand_positive(2, 2, &mut rng);
            let r2 = rand_positive(2, 2, &mut rng);
            let r3 = rand_positive(2, 2, &mut rng);
            assert!(r1.as_slice().iter().all(|&x| x > 0.0));
            let bar = r1.matmul(&r2).unwrap().matmul(&r3).unwrap();
            assert!(bar.as_slice().iter().all(|&x| x > 0.0));
        }
    }
}

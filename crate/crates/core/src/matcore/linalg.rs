use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar};

/// Gauss-Jordan inversion with partial pivoting.
pub fn inverse<T: Scalar>(a: &Mat<T>) -> Result<Mat<T>> {
    if !a.is_square() {
        return Err(Error::shape(
            "inverse",
            format!("{:?} is not square", a.shape()),
        ));
    }
    let n = a.rows();
    let mut work = a.clone();
    let mut inv = Mat::identity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                work[(i, col)]
                    .abs()
                    .partial_cmp(&work[(j, col)].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty pivot range");
        let p = work[(pivot, col)];
        if !(p.abs().to_f64() > scale * 1e-300) || !p.is_finite() {
            return Err(Error::Singular);
        }
        if pivot != col {
            swap_rows(&mut work, pivot, col);
            swap_rows(&mut inv, pivot, col);
        }
        let recip = T::ONE / p;
        for j in 0..n {
            work[(col, j)] *= recip;
            inv[(col, j)] *= recip;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = work[(i, col)];
            if f == T::ZERO {
                continue;
            }
            for j in 0..n {
                let wv = work[(col, j)];
                let iv = inv[(col, j)];
                work[(i, j)] -= f * wv;
                inv[(i, j)] -= f * iv;
            }
        }
    }
    if !inv.all_finite() {
        return Err(Error::Singular);
    }
    Ok(inv)
}

fn swap_rows<T: Scalar>(m: &mut Mat<T>, a: usize, b: usize) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for j in 0..cols {
        data.swap(a * cols + j, b * cols + j);
    }
}

/// 1-norm condition number given a precomputed inverse.
pub fn cond_1<T: Scalar>(a: &Mat<T>, inv: &Mat<T>) -> f64 {
    a.norm_1() * inv.norm_1()
}

/// `max |A·B - I|`
pub fn identity_residual<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<f64> {
    let prod = a.matmul(b)?;
    Ok(prod.max_abs_diff(&Mat::identity(prod.rows())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverts_small_matrix() {
        let a = Mat::from_rows(&[[4.0, 7.0], [2.0, 6.0]]);
        let inv = inverse(&a).unwrap();
        let want = Mat::from_rows(&[[0.6, -0.7], [-0.2, 0.4]]);
        assert!(inv.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn needs_pivoting() {
        let a = Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(inverse(&a).unwrap(), a);
    }

    #[test]
    fn singular_is_reported() {
        let a = Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(inverse(&a), Err(Error::Singular)));
    }
}

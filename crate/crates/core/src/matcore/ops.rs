use crate::error::{Error, Result};
use crate::matcore::{Invertible, Mat, Scalar};

/// Kronecker product with composite index `(i, s) -> i*p + s`:
/// `out[i*p + s, j*q + t] = a[i, j] * b[s, t]`.
pub fn kron<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("kron of an empty matrix".into()));
    }
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    let rows = m
        .checked_mul(p)
        .ok_or(Error::DimensionOverflow { rows: m, cols: p })?;
    let cols = n
        .checked_mul(q)
        .ok_or(Error::DimensionOverflow { rows: n, cols: q })?;
    rows.checked_mul(cols)
        .ok_or(Error::DimensionOverflow { rows, cols })?;
    let mut out = Mat::zeros(rows, cols);
    for i in 0..m {
        for j in 0..n {
            let aij = a[(i, j)];
            if aij == T::ZERO {
                continue;
            }
            for s in 0..p {
                let dst = &mut out.row_mut(i * p + s)[j * q..(j + 1) * q];
                for (d, &bv) in dst.iter_mut().zip(b.row(s)) {
                    *d = aij * bv;
                }
            }
        }
    }
    Ok(out)
}

/// The `(s, t)` Kronecker block: rows `i*p + s`, columns `j*q + t`.
/// For `K = A ⊗ B` this equals `A · B[s, t]`.
pub fn kron_block<T: Scalar>(k: &Mat<T>, p: usize, q: usize, s: usize, t: usize) -> Result<Mat<T>> {
    if p == 0 || q == 0 || !k.rows().is_multiple_of(p) || !k.cols().is_multiple_of(q) {
        return Err(Error::shape(
            "kron_block",
            format!("{:?} is not divisible by {p}x{q}", k.shape()),
        ));
    }
    if s >= p {
        return Err(Error::IndexOutOfRange { index: s, size: p });
    }
    if t >= q {
        return Err(Error::IndexOutOfRange { index: t, size: q });
    }
    Ok(Mat::from_fn(k.rows() / p, k.cols() / q, |i, j| {
        k[(i * p + s, j * q + t)]
    }))
}

pub fn block_diag<T: Scalar>(blocks: &[Mat<T>]) -> Result<Mat<T>> {
    if let Some(b) = blocks.iter().find(|b| !b.is_square()) {
        return Err(Error::shape(
            "block_diag",
            format!("block {:?} is not square", b.shape()),
        ));
    }
    let n: usize = blocks.iter().map(Mat::rows).sum();
    let mut out = Mat::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        for i in 0..b.rows() {
            out.row_mut(off + i)[off..off + b.cols()].copy_from_slice(b.row(i));
        }
        off += b.rows();
    }
    Ok(out)
}

/// Block-diagonal assembly that carries the inverse along.
pub fn block_diag_invertible<T: Scalar>(blocks: &[Invertible<T>]) -> Result<Invertible<T>> {
    let fwd: Vec<_> = blocks.iter().map(|b| b.mat().clone()).collect();
    let inv: Vec<_> = blocks.iter().map(|b| b.inv().clone()).collect();
    Ok(Invertible::from_parts(block_diag(&fwd)?, block_diag(&inv)?))
}

/// Index-selection pair `(e1, e2)` with `e1 · (A ⊗ R) · e2 = A · R[s0, t0]` for every
/// `A` of shape `b x d` and `R` of shape `p x q`.
pub fn selection_pair<T: Scalar>(
    b: usize,
    p: usize,
    d: usize,
    q: usize,
    s0: usize,
    t0: usize,
) -> Result<(Mat<T>, Mat<T>)> {
    if s0 >= p {
        return Err(Error::IndexOutOfRange { index: s0, size: p });
    }
    if t0 >= q {
        return Err(Error::IndexOutOfRange { index: t0, size: q });
    }
    let mut e1 = Mat::zeros(b, b * p);
    for i in 0..b {
        e1[(i, i * p + s0)] = T::ONE;
    }
    let mut e2 = Mat::zeros(d * q, d);
    for j in 0..d {
        e2[(j * q + t0, j)] = T::ONE;
    }
    Ok((e1, e2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{rand_uniform, SeededRng};

    #[test]
    fn kron_identity_is_block_diagonal() {
        let b = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let k = kron(&Mat::identity(2), &b).unwrap();
        assert_eq!(k, block_diag(&[b.clone(), b]).unwrap());
    }

    #[test]
    fn kron_scalar_scales() {
        let b = Mat::from_rows(&[[1.0, -2.0, 0.5]]);
        assert_eq!(kron(&Mat::filled(1, 1, 2.0), &b).unwrap(), b.scale(2.0));
    }

    #[test]
    fn kron_rejects_empty() {
        let e = Mat::<f64>::zeros(0, 3);
        assert!(kron(&e, &Mat::identity(2)).is_err());
    }

    #[test]
    fn mixed_product_2x2() {
        let mut rng = SeededRng::new(21);
        let m: Vec<_> = (0..4)
            .map(|_| rand_uniform(2, 2, -1.0, 1.0, &mut rng))
            .collect();
        let lhs = kron(&m[0], &m[1])
            .unwrap()
            .matmul(&kron(&m[2], &m[3]).unwrap())
            .unwrap();
        let rhs = kron(&m[0].matmul(&m[2]).unwrap(), &m[1].matmul(&m[3]).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn block_diag_single_and_identities() {
        let s = Mat::from_rows(&[[2.0, 1.0], [0.0, 3.0]]);
        assert_eq!(block_diag(std::slice::from_ref(&s)).unwrap(), s);
        let i5 = block_diag(&[Mat::<f64>::identity(2), Mat::identity(3)]).unwrap();
        assert_eq!(i5, Mat::identity(5));
        assert!(block_diag(&[Mat::<f64>::zeros(2, 3)]).is_err());
    }

    #[test]
    fn block_diag_inverse_is_blockwise() {
        let mut rng = SeededRng::new(4);
        let s1 = crate::matcore::rand_invertible(2, &mut rng, 1e6).unwrap();
        let s2 = crate::matcore::rand_invertible(2, &mut rng, 1e6).unwrap();
        let whole = block_diag(&[s1.mat().clone(), s2.mat().clone()]).unwrap();
        let inv_whole = crate::matcore::inverse(&whole).unwrap();
        let blockwise = block_diag(&[s1.inv().clone(), s2.inv().clone()]).unwrap();
        assert!(inv_whole.max_abs_diff(&blockwise) < 1e-12);
    }

    #[test]
    fn selection_trivial_case() {
        let (e1, e2) = selection_pair::<f64>(3, 1, 4, 1, 0, 0).unwrap();
        assert_eq!(e1, Mat::identity(3));
        assert_eq!(e2, Mat::identity(4));
        assert!(selection_pair::<f64>(2, 2, 2, 2, 2, 0).is_err());
    }

    #[test]
    fn selection_recovers_unit_block() {
        let a = Mat::from_rows(&[[1.0, -2.0, 3.5], [0.25, 4.0, -1.0]]);
        let r = Mat::from_rows(&[[0.3, 1.0], [0.7, 0.2]]);
        let (e1, e2) = selection_pair(2, 2, 3, 2, 0, 1).unwrap();
        let got = e1
            .matmul(&kron(&a, &r).unwrap())
            .unwrap()
            .matmul(&e2)
            .unwrap();
        assert_eq!(got, a);
    }
}

use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar};

/// A permutation of `0..size`, identified with the 0/1 matrix `Π` where `Π[i, map[i]] = 1`.
///
/// Left multiplication `Π·A` gathers rows (`row i <- row map[i]`), right multiplication
/// `A·Π` moves column `k` to position `map[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perm {
    map: Vec<usize>,
}

impl Perm {
    pub fn identity(n: usize) -> Self {
        Perm {
            map: (0..n).collect(),
        }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n {
                return Err(Error::IndexOutOfRange { index: m, size: n });
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidArgument(format!(
                    "index {m} repeated in permutation"
                )));
            }
        }
        Ok(Perm { map })
    }

    pub fn size(&self) -> usize {
        self.map.len()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Perm {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Perm { map: inv }
    }

    /// `Π·v` for a column vector `v`.
    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.map.len(), "permutation size mismatch");
        self.map.iter().map(|&m| v[m]).collect()
    }

    pub fn matrix<T: Scalar>(&self) -> Mat<T> {
        let n = self.map.len();
        let mut m = Mat::zeros(n, n);
        for (i, &j) in self.map.iter().enumerate() {
            m[(i, j)] = T::ONE;
        }
        m
    }

    /// `Π·A`
    pub fn permute_rows<T: Scalar>(&self, a: &Mat<T>) -> Result<Mat<T>> {
        if a.rows() != self.size() {
            return Err(Error::shape(
                "permute_rows",
                format!("perm {} vs {} rows", self.size(), a.rows()),
            ));
        }
        let mut data = Vec::with_capacity(a.len());
        for &m in &self.map {
            data.extend_from_slice(a.row(m));
        }
        Mat::new(a.rows(), a.cols(), data)
    }

    /// `A·Π`
    pub fn permute_cols<T: Scalar>(&self, a: &Mat<T>) -> Result<Mat<T>> {
        if a.cols() != self.size() {
            return Err(Error::shape(
                "permute_cols",
                format!("perm {} vs {} cols", self.size(), a.cols()),
            ));
        }
        let mut out = Mat::zeros(a.rows(), a.cols());
        for i in 0..a.rows() {
            let src = a.row(i);
            let dst = out.row_mut(i);
            for (k, &m) in self.map.iter().enumerate() {
                dst[m] = src[k];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Perm, Mat<f64>) {
        let p = Perm::from_map(vec![2, 0, 3, 1]).unwrap();
        let a = Mat::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        (p, a)
    }

    #[test]
    fn row_and_column_application_match_matrix_products() {
        let (p, a) = sample();
        let pm = p.matrix::<f64>();
        assert_eq!(p.permute_rows(&a).unwrap(), pm.matmul(&a).unwrap());
        assert_eq!(p.permute_cols(&a).unwrap(), a.matmul(&pm).unwrap());
    }

    #[test]
    fn inverse_is_transpose() {
        let (p, _) = sample();
        assert_eq!(p.inverse().matrix::<f64>(), p.matrix::<f64>().transpose());
        let v = vec![10, 20, 30, 40];
        assert_eq!(p.inverse().apply(&p.apply(&v)), v);
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Perm::from_map(vec![0, 0]).is_err());
        assert!(Perm::from_map(vec![0, 2]).is_err());
    }
}

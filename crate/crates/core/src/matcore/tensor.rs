use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar};

/// Activation or kernel tensor in (n, c, h, w) order, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len = checked_len(dims)?;
        if len != data.len() {
            return Err(Error::shape(
                "Tensor4::new",
                format!("{dims:?} needs {len} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![T::ZERO; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for a in 0..n {
            for b in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(a, b, y, x));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// 2-D view with `n` rows and `c*h*w` columns.
    pub fn flatten(&self) -> Mat<T> {
        let [n, c, h, w] = self.dims;
        Mat::new(n, c * h * w, self.data.clone()).expect("flatten preserves length")
    }

    pub fn unflatten(m: &Mat<T>, c: usize, h: usize, w: usize) -> Result<Self> {
        if m.cols() != c * h * w {
            return Err(Error::shape(
                "unflatten",
                format!("{} columns cannot hold {c}x{h}x{w}", m.cols()),
            ));
        }
        Tensor4::new([m.rows(), c, h, w], m.as_slice().to_vec())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.dims != rhs.dims {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.dims, rhs.dims),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor4 {
            dims: self.dims,
            data,
        })
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        if self.dims != rhs.dims {
            return Err(Error::shape(
                "sub",
                format!("{:?} vs {:?}", self.dims, rhs.dims),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor4 {
            dims: self.dims,
            data,
        })
    }

    /// Adds a per-(sample, channel) offset to every spatial position.
    pub fn add_channel_bias(&self, bias: &Mat<T>) -> Result<Self> {
        let [n, c, h, w] = self.dims;
        if bias.shape() != (n, c) {
            return Err(Error::shape(
                "add_channel_bias",
                format!("bias {:?} vs (n, c) = ({n}, {c})", bias.shape()),
            ));
        }
        let mut out = self.clone();
        let hw = h * w;
        for a in 0..n {
            for b in 0..c {
                let v = bias[(a, b)];
                let base = (a * c + b) * hw;
                for x in &mut out.data[base..base + hw] {
                    *x += v;
                }
            }
        }
        Ok(out)
    }

    /// Returns `left · X · right`, where `left` mixes samples and `right` mixes channels:
    /// `Y[n', c'] = sum_{n, c} left[n', n] X[n, c] right[c, c']`, spatial positions untouched.
    pub fn mix(&self, left: &Mat<T>, right: &Mat<T>) -> Result<Self> {
        let [n, c, h, w] = self.dims;
        if left.shape() != (n, n) || right.shape() != (c, c) {
            return Err(Error::shape(
                "Tensor4::mix",
                format!(
                    "left {:?}, right {:?} for tensor {:?}",
                    left.shape(),
                    right.shape(),
                    self.dims
                ),
            ));
        }
        let hw = h * w;
        let batch_mixed = left.matmul(&self.flatten())?;
        let right_t = right.transpose();
        let mut data = Vec::with_capacity(self.data.len());
        for a in 0..n {
            let block = Mat::new(c, hw, batch_mixed.row(a).to_vec())?;
            data.extend(right_t.matmul(&block)?.into_vec());
        }
        Tensor4::new(self.dims, data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.to_f64().abs()))
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!(self.dims, rhs.dims, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(0.0, |m, (&a, &b)| m.max((a.to_f64() - b.to_f64()).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn checked_len(dims: [usize; 4]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimensionOverflow {
            rows: dims[0],
            cols: dims[1..].iter().product(),
        })
}

impl<T> Index<(usize, usize, usize, usize)> for Tensor4<T> {
    type Output = T;

    #[inline]
    fn index(&self, (a, b, y, x): (usize, usize, usize, usize)) -> &T {
        let [_, c, h, w] = self.dims;
        &self.data[((a * c + b) * h + y) * w + x]
    }
}

impl<T> IndexMut<(usize, usize, usize, usize)> for Tensor4<T> {
    #[inline]
    fn index_mut(&mut self, (a, b, y, x): (usize, usize, usize, usize)) -> &mut T {
        let [_, c, h, w] = self.dims;
        &mut self.data[((a * c + b) * h + y) * w + x]
    }
}

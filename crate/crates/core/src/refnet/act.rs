use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{Mat, Scalar, Tensor4};

/// An activation flowing between blocks: a row matrix or a 4-D feature map.
#[derive(Debug, Clone, PartialEq)]
pub enum Act<T> {
    Mat(Mat<T>),
    T4(Tensor4<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Mat { rows: usize, cols: usize },
    T4 { dims: [usize; 4] },
}

impl Shape {
    /// Number of rows seen by the row mask (batch or sequence length).
    pub fn rows(&self) -> usize {
        match *self {
            Shape::Mat { rows, .. } => rows,
            Shape::T4 { dims } => dims[0],
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            Shape::Mat { rows, cols } => rows * cols,
            Shape::T4 { dims } => dims.iter().product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Mat { rows, cols } => write!(f, "{rows}x{cols}"),
            Shape::T4 { dims } => write!(f, "{}x{}x{}x{}", dims[0], dims[1], dims[2], dims[3]),
        }
    }
}

impl<T: Scalar> Act<T> {
    pub fn shape(&self) -> Shape {
        match self {
            Act::Mat(m) => Shape::Mat {
                rows: m.rows(),
                cols: m.cols(),
            },
            Act::T4(t) => Shape::T4 { dims: t.dims() },
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        match shape {
            Shape::Mat { rows, cols } => Act::Mat(Mat::zeros(rows, cols)),
            Shape::T4 { dims } => Act::T4(Tensor4::zeros(dims)),
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        Ok(match shape {
            Shape::Mat { rows, cols } => Act::Mat(Mat::new(rows, cols, data)?),
            Shape::T4 { dims } => Act::T4(Tensor4::new(dims, data)?),
        })
    }

    pub fn as_mat(&self) -> Result<&Mat<T>> {
        match self {
            Act::Mat(m) => Ok(m),
            Act::T4(t) => Err(Error::shape(
                "activation",
                format!("expected a matrix, got {:?}", t.dims()),
            )),
        }
    }

    pub fn as_t4(&self) -> Result<&Tensor4<T>> {
        match self {
            Act::T4(t) => Ok(t),
            Act::Mat(m) => Err(Error::shape(
                "activation",
                format!("expected a 4-D tensor, got {:?}", m.shape()),
            )),
        }
    }

    pub fn as_slice(&self) -> &[T] {
        match self {
            Act::Mat(m) => m.as_slice(),
            Act::T4(t) => t.as_slice(),
        }
    }

    /// Row view: matrices as-is, 4-D tensors flattened to `n x (c*h*w)`.
    pub fn to_rows(&self) -> Mat<T> {
        match self {
            Act::Mat(m) => m.clone(),
            Act::T4(t) => t.flatten(),
        }
    }

    /// Inverse of [`Act::to_rows`] for an activation of shape `like`.
    pub fn from_rows(m: Mat<T>, like: Shape) -> Result<Self> {
        match like {
            Shape::Mat { .. } => Ok(Act::Mat(m)),
            Shape::T4 { dims } => Ok(Act::T4(Tensor4::unflatten(&m, dims[1], dims[2], dims[3])?)),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        match self {
            Act::Mat(m) => Act::Mat(m.map(f)),
            Act::T4(t) => Act::T4(t.map(f)),
        }
    }

    pub fn add(&self, rhs: &Act<T>) -> Result<Self> {
        match (self, rhs) {
            (Act::Mat(a), Act::Mat(b)) => Ok(Act::Mat(a.add(b)?)),
            (Act::T4(a), Act::T4(b)) => Ok(Act::T4(a.add(b)?)),
            _ => Err(Error::shape(
                "add",
                format!("{} vs {}", self.shape(), rhs.shape()),
            )),
        }
    }

    pub fn sub(&self, rhs: &Act<T>) -> Result<Self> {
        match (self, rhs) {
            (Act::Mat(a), Act::Mat(b)) => Ok(Act::Mat(a.sub(b)?)),
            (Act::T4(a), Act::T4(b)) => Ok(Act::T4(a.sub(b)?)),
            _ => Err(Error::shape(
                "sub",
                format!("{} vs {}", self.shape(), rhs.shape()),
            )),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Act<U> {
        match self {
            Act::Mat(m) => Act::Mat(m.cast()),
            Act::T4(t) => Act::T4(t.cast()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Act::Mat(m) => m.max_abs(),
            Act::T4(t) => t.max_abs(),
        }
    }

    pub fn max_abs_diff(&self, rhs: &Act<T>) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{} vs {}", self.shape(), rhs.shape()),
            ));
        }
        Ok(self
            .as_slice()
            .iter()
            .zip(rhs.as_slice())
            .fold(0.0, |m, (&a, &b)| m.max((a.to_f64() - b.to_f64()).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }
}

//! Dense linear algebra: matrices, 4-D tensors, Kronecker products, permutations and
//! random mask generation.

mod linalg;
mod mat;
mod ops;
mod perm;
mod random;
mod rng;
mod scalar;
mod tensor;

pub use linalg::{cond_1, identity_residual, inverse};
pub use mat::Mat;
pub use ops::{block_diag, block_diag_invertible, kron, kron_block, selection_pair};
pub use perm::Perm;
pub use random::{
    rand_invertible, rand_perm, rand_positive, rand_positive_invertible, rand_uniform, Invertible,
    DEFAULT_COND_MAX, INVERSE_RESIDUAL_TOL,
};
pub use rng::SeededRng;
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor4;

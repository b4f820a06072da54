//! Masked neural-network inference across a simulated trusted-enclave boundary.
//!
//! The enclave obfuscates a model's weights once with reusable invertible masks, then
//! prepares fresh one-time materials per inference. The untrusted runtime executes the whole
//! forward pass on masked activations; the enclave is only entered to mask the input and to
//! turn the masked output back into labels.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enclave;
pub mod error;
pub mod harness;
pub mod matcore;
pub mod refnet;
pub mod runtime;

pub use error::{Error, Result};
pub use matcore::{Mat, Perm, Precision, Scalar, SeededRng, Tensor4};

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("product shape {rows}x{cols} overflows usize")]
    DimensionOverflow { rows: usize, cols: usize },

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("no invertible {n}x{n} draw with condition number <= {cond_max:e} after {attempts} attempts")]
    RejectionExhausted {
        n: usize,
        cond_max: f64,
        attempts: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("enclave crossing budget exhausted: attempted crossing #{attempted} (limit 2)")]
    CrossingBudget { attempted: u32 },

    #[error("crossing out of order: expected {expected}, got {got}")]
    CrossingOrder {
        expected: &'static str,
        got: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("kronecker block extraction inconsistent: block ({s},{t}) differs by {deviation:e} (tolerance {tolerance:e})")]
    Extraction {
        s: usize,
        t: usize,
        deviation: f64,
        tolerance: f64,
    },

    #[error("mask tag mismatch: {0}")]
    MaskTag(String),

    #[error("trial {trial} (seed {seed}) failed: {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch in tensor `{tensor}`")]
    Checksum { tensor: String },

    #[error("file truncated while reading {0}")]
    Truncated(String),

    #[error("conformance failure: {0}")]
    Conformance(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_layer(self, index: usize, kind: &'static str) -> Self {
        Error::Layer {
            index,
            kind,
            source: Box::new(self),
        }
    }
}

//! Plaintext reference layers and models. Every masked operation is checked against these.

mod act;
mod layers;
mod model;
pub mod ops;

pub use act::{Act, Shape};
pub use layers::{BatchNorm, Block, Conv, Dense, LayerKind, LayerNorm, Mha};
pub use model::PlainModel;

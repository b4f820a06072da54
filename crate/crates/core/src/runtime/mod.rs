//! Untrusted executor: runs obfuscated models on masked activations without any secret.

mod bundle;
mod counters;
mod exec;

pub use bundle::{
    AttentionMaterials, BlockMaterials, GeluMaterials, LinearMaterials, MaskTag, NamedTensor,
    NormMaterials, ObfBlock, ObfBundle, ObfWeights, OtpMaterials, ReluMaterials,
};
pub use counters::{ExtraOps, LayerOps, OpCounters};
pub use exec::{
    exec_avgpool, exec_conv, exec_dense, exec_flatten, exec_gelu, exec_layernorm, exec_mha,
    exec_relu, exec_residual, run, run_traced, MaskedAct, ObfModel,
};

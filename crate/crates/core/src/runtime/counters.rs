use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::refnet::LayerKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraOps {
    pub mults: u64,
    pub krons: u64,
}

impl ExtraOps {
    pub const NONE: ExtraOps = ExtraOps { mults: 0, krons: 0 };

    pub const fn new(mults: u64, krons: u64) -> Self {
        ExtraOps { mults, krons }
    }

    /// Extra operations a masked layer of `kind` performs beyond its plaintext counterpart.
    pub fn expected(kind: LayerKind) -> Self {
        match kind {
            LayerKind::Relu => ExtraOps::new(4, 2),
            LayerKind::Gelu => ExtraOps::new(4, 1),
            LayerKind::LayerNorm => ExtraOps::new(1, 0),
            _ => ExtraOps::NONE,
        }
    }
}

impl std::ops::AddAssign for ExtraOps {
    fn add_assign(&mut self, rhs: Self) {
        self.mults += rhs.mults;
        self.krons += rhs.krons;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOps {
    pub index: usize,
    pub kind: LayerKind,
    pub ops: ExtraOps,
}

/// Extra-operation and crossing bookkeeping for one inference.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub tee_crossings: u32,
    pub layers: Vec<LayerOps>,
}

impl OpCounters {
    pub(crate) fn record(&mut self, index: usize, kind: LayerKind, ops: ExtraOps) {
        self.layers.push(LayerOps { index, kind, ops });
    }

    pub fn total(&self) -> ExtraOps {
        let mut t = ExtraOps::NONE;
        for l in &self.layers {
            t += l.ops;
        }
        t
    }

    pub fn by_kind(&self) -> BTreeMap<LayerKind, ExtraOps> {
        let mut m = BTreeMap::new();
        for l in &self.layers {
            *m.entry(l.kind).or_insert(ExtraOps::NONE) += l.ops;
        }
        m
    }
}

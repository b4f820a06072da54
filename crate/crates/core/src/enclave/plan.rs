use crate::error::{Error, Result};
use crate::matcore::Scalar;
use crate::refnet::{Block, PlainModel, Shape};
use crate::runtime::MaskTag;

/// Where a column-mask class gets its mask from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ClassSource {
    /// A fresh reusable invertible mask of size `dim`.
    Random { dim: usize },
    /// `mask(from) ⊗ I_hw`, produced by a flatten.
    Derived { from: usize, hw: usize },
}

/// Assignment of column masks to activations. Blocks that cannot change masks (activations,
/// pooling, residual adds) force their input and output into one class; residual adds also
/// pull in their source activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct MaskPlan {
    pub act_class: Vec<usize>,
    pub classes: Vec<ClassSource>,
    pub row_perm: bool,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn col_dim(s: Shape) -> usize {
    match s {
        Shape::Mat { cols, .. } => cols,
        Shape::T4 { dims } => dims[1],
    }
}

impl MaskPlan {
    pub fn new<T: Scalar>(model: &PlainModel<T>) -> Result<Self> {
        let blocks = model.blocks();
        match blocks.first() {
            Some(Block::Dense(_) | Block::Conv(_)) => {}
            Some(b) => {
                return Err(Error::Unsupported(format!(
                    "the first block must be dense or conv to absorb the input padding, got {}",
                    b.kind()
                )))
            }
            None => return Err(Error::Unsupported("empty model".into())),
        }
        let shapes = model.shapes()?;
        let mut uf = UnionFind((0..shapes.len()).collect());
        let mut flattens = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            match b {
                Block::Relu | Block::Gelu | Block::AvgPool { .. } => uf.union(i, i + 1),
                Block::Residual { from } => {
                    if *from == 0 {
                        return Err(Error::Unsupported(
                            "residual from the model input, which only exists padded".into(),
                        ));
                    }
                    uf.union(i, i + 1);
                    uf.union(i, *from);
                }
                Block::Flatten => flattens.push(i),
                Block::BatchNorm(_) => {
                    return Err(Error::Unsupported(format!(
                        "batchnorm at block {i} must be fused into its convolution first"
                    )))
                }
                Block::Dense(_) | Block::Conv(_) | Block::Mha(_) | Block::LayerNorm(_) => {}
            }
        }

        let mut root_class = vec![usize::MAX; shapes.len()];
        let mut act_class = Vec::with_capacity(shapes.len());
        let mut classes = Vec::new();
        for (j, &s) in shapes.iter().enumerate() {
            let r = uf.find(j);
            if root_class[r] == usize::MAX {
                root_class[r] = classes.len();
                classes.push(ClassSource::Random { dim: col_dim(s) });
            }
            act_class.push(root_class[r]);
        }
        let input_class = act_class[0];
        let mut derived = vec![false; classes.len()];
        for i in flattens {
            let out = act_class[i + 1];
            if out == input_class || derived[out] {
                return Err(Error::Unsupported(format!(
                    "flatten at block {i} feeds an activation whose mask is fixed elsewhere"
                )));
            }
            derived[out] = true;
            let hw = match shapes[i] {
                Shape::T4 { dims } => dims[2] * dims[3],
                Shape::Mat { .. } => unreachable!("shape-checked"),
            };
            classes[out] = ClassSource::Derived {
                from: act_class[i],
                hw,
            };
        }
        let row_perm = blocks
            .iter()
            .any(|b| matches!(b, Block::Mha(_) | Block::LayerNorm(_)));
        Ok(MaskPlan {
            act_class,
            classes,
            row_perm,
        })
    }

    pub fn tags(&self) -> Vec<MaskTag> {
        self.act_class
            .iter()
            .map(|&c| MaskTag {
                row_perm: self.row_perm,
                col: c as u32,
            })
            .collect()
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::enclave::{Enclave, EnclaveConfig};
use crate::error::{Error, Result};
use crate::harness::arch::{build_model, random_input, ArchSpec};
use crate::harness::verify::{prepare_model, run_protocol};
use crate::matcore::{Precision, Scalar, SeededRng};
use crate::refnet::{Block, LayerKind, PlainModel};
use crate::runtime::{ExtraOps, ObfBundle, OpCounters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub index: usize,
    pub kind: LayerKind,
    pub expected: ExtraOps,
    pub observed: ExtraOps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub tee_crossings: u32,
    pub rows: Vec<CountRow>,
    pub total: ExtraOps,
    pub by_kind: BTreeMap<LayerKind, ExtraOps>,
}

/// Checks every layer's extra-operation count against the per-kind table.
pub fn count_report(counters: &OpCounters) -> Result<CountReport> {
    let rows: Vec<CountRow> = counters
        .layers
        .iter()
        .map(|l| CountRow {
            index: l.index,
            kind: l.kind,
            expected: ExtraOps::expected(l.kind),
            observed: l.ops,
        })
        .collect();
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.expected != r.observed)
        .map(|r| {
            format!(
                "layer {} ({}): expected {} mult + {} kron, observed {} + {}",
                r.index,
                r.kind,
                r.expected.mults,
                r.expected.krons,
                r.observed.mults,
                r.observed.krons
            )
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::Conformance(bad.join("; ")));
    }
    Ok(CountReport {
        tee_crossings: counters.tee_crossings,
        total: counters.total(),
        by_kind: counters.by_kind(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindBytes {
    pub plaintext: usize,
    pub weights: usize,
    pub materials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub precision: Precision,
    pub plaintext_bytes: usize,
    pub weight_bytes: usize,
    pub material_bytes: usize,
    pub bundle_bytes: usize,
    pub nonlinear_bytes: usize,
    pub overhead_pct: f64,
    pub by_kind: BTreeMap<LayerKind, KindBytes>,
}

fn plaintext_len<T: Scalar>(b: &Block<T>) -> usize {
    match b {
        Block::Dense(d) => d.weight.len() + d.bias.len(),
        Block::Conv(c) => c.kernels.len() + c.bias.len(),
        Block::BatchNorm(bn) => 4 * bn.channels(),
        Block::Mha(m) => m.wq.len() + m.wk.len() + m.wv.len() + m.wo.len(),
        Block::LayerNorm(l) => 2 * l.dim(),
        _ => 0,
    }
}

/// Byte accounting of a bundle, attributed to the layer kind that owns each field.
pub fn size_report<T: Scalar>(plain: &PlainModel<T>, bundle: &ObfBundle<T>) -> SizeReport {
    let bytes = T::PRECISION.bytes();
    let mut by_kind: BTreeMap<LayerKind, KindBytes> = BTreeMap::new();
    for b in plain.blocks() {
        by_kind.entry(b.kind()).or_default().plaintext += plaintext_len(b) * bytes;
    }
    for t in bundle.weights.tensors() {
        by_kind.entry(t.kind).or_default().weights += t.data.len() * bytes;
    }
    if let Some(otp) = &bundle.otp {
        for t in otp.tensors(&bundle.kinds()) {
            by_kind.entry(t.kind).or_default().materials += t.data.len() * bytes;
        }
    }
    let plaintext_bytes = by_kind.values().map(|k| k.plaintext).sum();
    let weight_bytes = by_kind.values().map(|k| k.weights).sum();
    let material_bytes = by_kind.values().map(|k| k.materials).sum();
    let nonlinear_bytes = by_kind
        .iter()
        .filter(|(k, _)| k.is_nonlinear())
        .map(|(_, b)| b.weights + b.materials)
        .sum();
    let bundle_bytes = weight_bytes + material_bytes;
    SizeReport {
        precision: T::PRECISION,
        plaintext_bytes,
        weight_bytes,
        material_bytes,
        bundle_bytes,
        nonlinear_bytes,
        overhead_pct: 100.0 * (bundle_bytes as f64 - plaintext_bytes as f64)
            / plaintext_bytes.max(1) as f64,
        by_kind,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountAndSize {
    pub counts: CountReport,
    pub sizes: SizeReport,
}

/// Runs one inference of `model` and reports counter conformance and bundle sizes.
pub fn count_and_size_report<T: Scalar>(
    model: &PlainModel<T>,
    seed: u64,
    config: EnclaveConfig,
) -> Result<CountAndSize> {
    let model = prepare_model(model)?;
    let mut rng = SeededRng::new(seed);
    let x = random_input::<T>(model.input_shape(), &mut rng);
    let mut enclave = Enclave::new(&model, config, rng.next_u64())?;
    let run = run_protocol(&mut enclave, &x)?;
    let bundle = enclave.bundle(Some(run.otp));
    Ok(CountAndSize {
        counts: count_report(&run.counters)?,
        sizes: size_report(&model, &bundle),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    pub nonlinear_layers: usize,
    pub bundle_bytes: usize,
    pub nonlinear_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageGrowth {
    pub steps: Vec<GrowthStep>,
    /// Share of the growth from the first to the doubled configuration owned by nonlinear layers.
    pub nonlinear_share: f64,
    pub monotone: bool,
}

/// Bundle size as extra activations are stacked on an mlp whose linear layers stay fixed.
/// Step `k` repeats every activation `k + 1` times, so step 1 doubles the nonlinear count.
pub fn storage_growth<T: Scalar>(
    base: &ArchSpec,
    steps: usize,
    seed: u64,
) -> Result<StorageGrowth> {
    let ArchSpec::Mlp { .. } = base else {
        return Err(Error::Unsupported(
            "storage growth is measured on the mlp template".into(),
        ));
    };
    let mut out = Vec::new();
    for k in 0..steps.max(2) {
        let mut spec = base.clone();
        if let ArchSpec::Mlp {
            repeat_activation, ..
        } = &mut spec
        {
            *repeat_activation = k;
        }
        let model: PlainModel<T> = build_model(&spec, &mut SeededRng::new(seed))?;
        let r = count_and_size_report(&model, seed, EnclaveConfig::default())?;
        out.push(GrowthStep {
            nonlinear_layers: model.nonlinear_count(),
            bundle_bytes: r.sizes.bundle_bytes,
            nonlinear_bytes: r.sizes.nonlinear_bytes,
        });
    }
    let growth = out[1].bundle_bytes as f64 - out[0].bundle_bytes as f64;
    let nl_growth = out[1].nonlinear_bytes as f64 - out[0].nonlinear_bytes as f64;
    let monotone = out
        .windows(2)
        .all(|w| w[1].bundle_bytes > w[0].bundle_bytes);
    Ok(StorageGrowth {
        nonlinear_share: if growth > 0.0 {
            nl_growth / growth
        } else {
            0.0
        },
        steps: out,
        monotone,
    })
}

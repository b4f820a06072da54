use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::Scalar;
use crate::refnet::{Block, LayerKind, PlainModel};
use crate::runtime::{ObfBlock, ObfWeights};

/// Pearson correlation of two equal-length samples; 0 when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson needs equal lengths");
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic (largest gap between empirical CDFs).
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub min: f64,
    pub max: f64,
}

impl Moments {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len().max(1) as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Moments {
            mean,
            var,
            min: x.iter().copied().fold(f64::INFINITY, f64::min),
            max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Equal-width histogram over the sample's own range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

pub const HISTOGRAM_BINS: usize = 20;

impl Histogram {
    pub fn of(x: &[f64], bins: usize) -> Self {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; bins];
        if x.is_empty() || bins == 0 {
            return Histogram {
                lo: 0.0,
                hi: 0.0,
                counts,
            };
        }
        let width = (hi - lo).max(f64::MIN_POSITIVE);
        for &v in x {
            let b = (((v - lo) / width) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightComparison {
    pub index: usize,
    pub kind: LayerKind,
    pub field: String,
    pub entries: usize,
    pub pearson: f64,
    pub ks: f64,
    pub original: Moments,
    pub obfuscated: Moments,
    pub original_hist: Histogram,
    pub obfuscated_hist: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub layers: Vec<WeightComparison>,
    pub max_abs_pearson: f64,
}

fn as_f64<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64()).collect()
}

fn compare(
    index: usize,
    kind: LayerKind,
    field: &str,
    orig: Vec<f64>,
    obf: Vec<f64>,
) -> WeightComparison {
    WeightComparison {
        index,
        kind,
        field: field.to_string(),
        entries: orig.len(),
        pearson: pearson(&orig, &obf),
        ks: ks_statistic(&orig, &obf),
        original: Moments::of(&orig),
        obfuscated: Moments::of(&obf),
        original_hist: Histogram::of(&orig, HISTOGRAM_BINS),
        obfuscated_hist: Histogram::of(&obf, HISTOGRAM_BINS),
    }
}

/// Compares every weight tensor with its obfuscated counterpart, entry by entry in the
/// obfuscated layout (dense weights are compared as `Wᵀ` against `W̃`).
pub fn weight_stats<T: Scalar>(plain: &PlainModel<T>, obf: &ObfWeights<T>) -> Result<StatsReport> {
    if plain.blocks().len() != obf.blocks.len() {
        return Err(Error::shape(
            "weight_stats",
            format!(
                "{} plain blocks vs {} obfuscated",
                plain.blocks().len(),
                obf.blocks.len()
            ),
        ));
    }
    let mut layers = Vec::new();
    for (i, (p, o)) in plain.blocks().iter().zip(&obf.blocks).enumerate() {
        match (p, o) {
            (Block::Dense(d), ObfBlock::Dense { w }) => layers.push(compare(
                i,
                LayerKind::Dense,
                "w",
                as_f64(d.weight.transpose().as_slice()),
                as_f64(w.as_slice()),
            )),
            (Block::Conv(c), ObfBlock::Conv { kernels, .. }) => layers.push(compare(
                i,
                LayerKind::Conv,
                "kernels",
                as_f64(c.kernels.as_slice()),
                as_f64(kernels.as_slice()),
            )),
            (Block::Mha(m), ObfBlock::Mha { wq, wk, wv, wo, .. }) => {
                for (name, a, b) in [
                    ("wq", &m.wq, wq),
                    ("wk", &m.wk, wk),
                    ("wv", &m.wv, wv),
                    ("wo", &m.wo, wo),
                ] {
                    layers.push(compare(
                        i,
                        LayerKind::Mha,
                        name,
                        as_f64(a.as_slice()),
                        as_f64(b.as_slice()),
                    ));
                }
            }
            (p, o) if p.kind() == o.kind() => {}
            (p, o) => {
                return Err(Error::shape(
                    "weight_stats",
                    format!("block {i}: plain {} vs obfuscated {}", p.kind(), o.kind()),
                ))
            }
        }
    }
    let max_abs_pearson = layers.iter().map(|l| l.pearson.abs()).fold(0.0, f64::max);
    Ok(StatsReport {
        layers,
        max_abs_pearson,
    })
}

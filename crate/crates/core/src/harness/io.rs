//! Model, bundle, input and enclave-state files.
//!
//! Layout: a text line `maskinfer <version>`, a line `manifest <n>`, `n` bytes of JSON
//! manifest and a newline, then one little-endian payload per manifest tensor, each followed
//! by its xxh64 checksum (8 bytes, little-endian).

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::Path;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::enclave::{Enclave, EnclaveConfig};
use crate::error::{Error, Result};
use crate::matcore::{Mat, Precision, Scalar, Tensor4};
use crate::refnet::{
    Act, BatchNorm, Block, Conv, Dense, LayerKind, LayerNorm, Mha, PlainModel, Shape,
};
use crate::runtime::{
    AttentionMaterials, BlockMaterials, GeluMaterials, LinearMaterials, MaskTag, NamedTensor,
    NormMaterials, ObfBlock, ObfBundle, ObfWeights, OtpMaterials, ReluMaterials,
};

pub const MAGIC: &str = "maskinfer";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_SEED: u64 = 0;
const MAX_HEADER_LINE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Artifact {
    Model,
    Bundle,
    Input,
    /// Enclave state exported for reproduction. Never part of the protocol.
    Secrets,
}

impl std::fmt::Display for Artifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Artifact::Model => "model",
            Artifact::Bundle => "bundle",
            Artifact::Input => "input",
            Artifact::Secrets => "secrets",
        })
    }
}

/// Non-tensor parameters of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl LayerEntry {
    fn new(kind: LayerKind) -> Self {
        LayerEntry {
            kind,
            stride: None,
            padding: None,
            k: None,
            heads: None,
            causal: None,
            from: None,
            dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: Artifact,
    pub precision: Precision,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub non_protocol: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EnclaveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_inference: Option<u64>,
    /// Index of the inference the bundled one-time materials belong to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<u64>,
    pub input: Shape,
    #[serde(default)]
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<MaskTag>,
    pub tensors: Vec<TensorEntry>,
}

/// A decoded artifact together with how it was stored.
#[derive(Debug, Clone)]
pub struct Loaded<V> {
    pub value: V,
    pub stored: Precision,
    pub seed: Option<u64>,
    /// Set when the payloads were converted to a different precision on load.
    pub notice: Option<String>,
}

struct Writer {
    manifest: Manifest,
    payload: Vec<u8>,
}

impl Writer {
    fn new(artifact: Artifact, precision: Precision, input: Shape) -> Self {
        Writer {
            manifest: Manifest {
                artifact,
                precision,
                non_protocol: false,
                seed: None,
                config: None,
                next_inference: None,
                inference: None,
                input,
                layers: Vec::new(),
                tags: Vec::new(),
                tensors: Vec::new(),
            },
            payload: Vec::new(),
        }
    }

    fn push<T: Scalar>(&mut self, name: String, dims: Vec<usize>, data: &[T]) {
        let start = self.payload.len();
        for &x in data {
            x.write_le(&mut self.payload);
        }
        let mut h = XxHash64::with_seed(CHECKSUM_SEED);
        h.write(&self.payload[start..]);
        self.payload.extend_from_slice(&h.finish().to_le_bytes());
        self.manifest.tensors.push(TensorEntry { name, dims });
    }

    fn push_named<T: Scalar>(&mut self, t: &NamedTensor<'_, T>) {
        self.push(t.name(), t.dims.clone(), t.data);
    }

    fn finish(self) -> Vec<u8> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\nmanifest {}\n", json.len()).into_bytes();
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&self.payload);
        out
    }
}

struct Reader<'a> {
    manifest: Manifest,
    tensors: HashMap<String, (Vec<usize>, &'a [u8])>,
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .take(MAX_HEADER_LINE)
        .position(|&b| b == b'\n')
        .ok_or_else(|| {
            if rest.len() < MAX_HEADER_LINE {
                Error::Truncated(what.into())
            } else {
                Error::Format(format!("{what} line too long"))
            }
        })?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format(format!("{what} is not utf-8")))
}

/// Parses only the header and manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize)> {
    let mut pos = 0;
    let first = read_line(bytes, &mut pos, "header")?;
    let (magic, version) = first
        .split_once(' ')
        .ok_or_else(|| Error::Format("missing header".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("not a {MAGIC} file")));
    }
    let found: u32 = version
        .parse()
        .map_err(|_| Error::Format(format!("bad version `{version}`")))?;
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let second = read_line(bytes, &mut pos, "manifest header")?;
    let len: usize = second
        .strip_prefix("manifest ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad manifest header `{second}`")))?;
    let end = pos
        .checked_add(len + 1)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Truncated("manifest".into()))?;
    if bytes[end - 1] != b'\n' {
        return Err(Error::Format("manifest is not newline-terminated".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[pos..end - 1])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    Ok((manifest, end))
}

impl<'a> Reader<'a> {
    fn parse(bytes: &'a [u8], artifact: Artifact) -> Result<Self> {
        let (manifest, mut pos) = read_manifest(bytes)?;
        if manifest.artifact != artifact {
            return Err(Error::Format(format!(
                "expected a {artifact} file, found a {}",
                manifest.artifact
            )));
        }
        let width = manifest.precision.bytes();
        let mut tensors = HashMap::new();
        for t in &manifest.tensors {
            let n = t
                .dims
                .iter()
                .try_fold(width, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{}` is too large", t.name)))?;
            let end = pos
                .checked_add(n + 8)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Truncated(format!("tensor `{}`", t.name)))?;
            let data = &bytes[pos..pos + n];
            let mut h = XxHash64::with_seed(CHECKSUM_SEED);
            h.write(data);
            let stored = u64::from_le_bytes(bytes[pos + n..end].try_into().expect("8 bytes"));
            if h.finish() != stored {
                return Err(Error::Checksum {
                    tensor: t.name.clone(),
                });
            }
            if tensors
                .insert(t.name.clone(), (t.dims.clone(), data))
                .is_some()
            {
                return Err(Error::Format(format!("duplicate tensor `{}`", t.name)));
            }
            pos = end;
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - pos
            )));
        }
        Ok(Reader { manifest, tensors })
    }

    fn has(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    fn raw<T: Scalar>(&self, name: &str) -> Result<(Vec<usize>, Vec<T>)> {
        let (dims, data) = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        let values = match self.manifest.precision {
            p if p == T::PRECISION => data.chunks_exact(p.bytes()).map(T::read_le).collect(),
            Precision::F64 => data
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::read_le(c)))
                .collect(),
            Precision::F32 => data
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::read_le(c) as f64))
                .collect(),
        };
        Ok((dims.clone(), values))
    }

    fn vec<T: Scalar>(&self, name: &str) -> Result<Vec<T>> {
        match self.raw(name)? {
            (d, v) if d.len() == 1 => Ok(v),
            (d, _) => Err(Error::Format(format!(
                "tensor `{name}` has rank {}, expected 1",
                d.len()
            ))),
        }
    }

    fn scalar<T: Scalar>(&self, name: &str) -> Result<T> {
        match self.vec::<T>(name)?.as_slice() {
            [x] => Ok(*x),
            v => Err(Error::Format(format!(
                "tensor `{name}` has {} entries, expected 1",
                v.len()
            ))),
        }
    }

    fn mat<T: Scalar>(&self, name: &str) -> Result<Mat<T>> {
        match self.raw(name)? {
            (d, v) if d.len() == 2 => Mat::new(d[0], d[1], v),
            (d, _) => Err(Error::Format(format!(
                "tensor `{name}` has rank {}, expected 2",
                d.len()
            ))),
        }
    }

    fn t4<T: Scalar>(&self, name: &str) -> Result<Tensor4<T>> {
        match self.raw(name)? {
            (d, v) if d.len() == 4 => Tensor4::new([d[0], d[1], d[2], d[3]], v),
            (d, _) => Err(Error::Format(format!(
                "tensor `{name}` has rank {}, expected 4",
                d.len()
            ))),
        }
    }

    fn act<T: Scalar>(&self, name: &str) -> Result<Act<T>> {
        let (dims, v) = self.raw(name)?;
        let shape = match dims.as_slice() {
            &[rows, cols] => Shape::Mat { rows, cols },
            &[n, c, h, w] => Shape::T4 { dims: [n, c, h, w] },
            d => {
                return Err(Error::Format(format!(
                    "tensor `{name}` has rank {}",
                    d.len()
                )))
            }
        };
        Act::from_vec(shape, v)
    }

    fn loaded<V, T: Scalar>(&self, value: V) -> Loaded<V> {
        let stored = self.manifest.precision;
        Loaded {
            value,
            stored,
            seed: self.manifest.seed,
            notice: (stored != T::PRECISION).then(|| {
                format!(
                    "{} stored at {stored} was converted to {} on load",
                    self.manifest.artifact,
                    T::PRECISION
                )
            }),
        }
    }
}

fn need<V>(v: Option<V>, i: usize, what: &str) -> Result<V> {
    v.ok_or_else(|| Error::Format(format!("layer {i} is missing `{what}`")))
}

fn write_model_layers<T: Scalar>(w: &mut Writer, model: &PlainModel<T>) {
    for (i, b) in model.blocks().iter().enumerate() {
        let mut e = LayerEntry::new(b.kind());
        let name = |f: &str| format!("b{i}.{f}");
        match b {
            Block::Dense(d) => {
                w.push(
                    name("weight"),
                    vec![d.weight.rows(), d.weight.cols()],
                    d.weight.as_slice(),
                );
                w.push(name("bias"), vec![d.bias.len()], &d.bias);
            }
            Block::Conv(c) => {
                e.stride = Some(c.stride);
                e.padding = Some(c.padding);
                w.push(
                    name("kernels"),
                    c.kernels.dims().to_vec(),
                    c.kernels.as_slice(),
                );
                w.push(name("bias"), vec![c.bias.len()], &c.bias);
            }
            Block::BatchNorm(bn) => {
                for (f, v) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("mean", &bn.mean),
                    ("var", &bn.var),
                ] {
                    w.push(name(f), vec![v.len()], v);
                }
                w.push(name("eps"), vec![1], &[bn.eps]);
            }
            Block::AvgPool { k } => e.k = Some(*k),
            Block::Flatten | Block::Relu | Block::Gelu => {}
            Block::Mha(m) => {
                e.heads = Some(m.heads);
                e.causal = Some(m.causal);
                for (f, x) in [("wq", &m.wq), ("wk", &m.wk), ("wv", &m.wv), ("wo", &m.wo)] {
                    w.push(name(f), vec![x.rows(), x.cols()], x.as_slice());
                }
            }
            Block::LayerNorm(l) => {
                w.push(name("gamma"), vec![l.gamma.len()], &l.gamma);
                w.push(name("beta"), vec![l.beta.len()], &l.beta);
                w.push(name("eps"), vec![1], &[l.eps]);
            }
            Block::Residual { from } => e.from = Some(*from),
        }
        w.manifest.layers.push(e);
    }
}

fn read_model_layers<T: Scalar>(r: &Reader<'_>) -> Result<PlainModel<T>> {
    let mut blocks = Vec::with_capacity(r.manifest.layers.len());
    for (i, e) in r.manifest.layers.iter().enumerate() {
        let name = |f: &str| format!("b{i}.{f}");
        let b = match e.kind {
            LayerKind::Dense => {
                Block::Dense(Dense::new(r.mat(&name("weight"))?, r.vec(&name("bias"))?)?)
            }
            LayerKind::Conv => Block::Conv(Conv::new(
                r.t4(&name("kernels"))?,
                r.vec(&name("bias"))?,
                need(e.stride, i, "stride")?,
                need(e.padding, i, "padding")?,
            )?),
            LayerKind::BatchNorm => Block::BatchNorm(BatchNorm {
                gamma: r.vec(&name("gamma"))?,
                beta: r.vec(&name("beta"))?,
                mean: r.vec(&name("mean"))?,
                var: r.vec(&name("var"))?,
                eps: r.scalar(&name("eps"))?,
            }),
            LayerKind::AvgPool => Block::AvgPool {
                k: need(e.k, i, "k")?,
            },
            LayerKind::Flatten => Block::Flatten,
            LayerKind::Relu => Block::Relu,
            LayerKind::Gelu => Block::Gelu,
            LayerKind::Mha => {
                let mut m = Mha::new(
                    r.mat(&name("wq"))?,
                    r.mat(&name("wk"))?,
                    r.mat(&name("wv"))?,
                    r.mat(&name("wo"))?,
                    need(e.heads, i, "heads")?,
                )?;
                m.causal = e.causal.unwrap_or(false);
                Block::Mha(m)
            }
            LayerKind::LayerNorm => Block::LayerNorm(LayerNorm {
                gamma: r.vec(&name("gamma"))?,
                beta: r.vec(&name("beta"))?,
                eps: r.scalar(&name("eps"))?,
            }),
            LayerKind::Residual => Block::Residual {
                from: need(e.from, i, "from")?,
            },
        };
        blocks.push(b);
    }
    PlainModel::new(r.manifest.input, blocks)
}

pub fn model_to_bytes<T: Scalar>(model: &PlainModel<T>, seed: Option<u64>) -> Vec<u8> {
    let mut w = Writer::new(Artifact::Model, T::PRECISION, model.input_shape());
    w.manifest.seed = seed;
    write_model_layers(&mut w, model);
    w.finish()
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Loaded<PlainModel<T>>> {
    let r = Reader::parse(bytes, Artifact::Model)?;
    let model = read_model_layers(&r)?;
    Ok(r.loaded::<_, T>(model))
}

/// The enclave seed is deliberately absent: it would regenerate every mask.
pub fn bundle_to_bytes<T: Scalar>(bundle: &ObfBundle<T>) -> Vec<u8> {
    let mut w = Writer::new(Artifact::Bundle, T::PRECISION, bundle.weights.input);
    w.manifest.tags = bundle.weights.tags.clone();
    w.manifest.inference = bundle.otp.as_ref().map(|o| o.inference);
    for b in &bundle.weights.blocks {
        let mut e = LayerEntry::new(b.kind());
        match b {
            ObfBlock::Conv {
                stride, padding, ..
            } => {
                e.stride = Some(*stride);
                e.padding = Some(*padding);
            }
            ObfBlock::AvgPool { k } => e.k = Some(*k),
            ObfBlock::Mha { heads, .. } => e.heads = Some(*heads),
            ObfBlock::LayerNorm { dim } => e.dim = Some(*dim),
            ObfBlock::Residual { from } => e.from = Some(*from),
            ObfBlock::Dense { .. } | ObfBlock::Flatten | ObfBlock::Relu | ObfBlock::Gelu => {}
        }
        w.manifest.layers.push(e);
    }
    for t in bundle.tensors() {
        w.push_named(&t);
    }
    w.finish()
}

pub fn bundle_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Loaded<ObfBundle<T>>> {
    let r = Reader::parse(bytes, Artifact::Bundle)?;
    let layers = &r.manifest.layers;
    let mut blocks = Vec::with_capacity(layers.len());
    for (i, e) in layers.iter().enumerate() {
        let name = |f: &str| format!("b{i}.{f}");
        blocks.push(match e.kind {
            LayerKind::Dense => ObfBlock::Dense {
                w: r.mat(&name("w"))?,
            },
            LayerKind::Conv => ObfBlock::Conv {
                kernels: r.t4(&name("kernels"))?,
                stride: need(e.stride, i, "stride")?,
                padding: need(e.padding, i, "padding")?,
            },
            LayerKind::AvgPool => ObfBlock::AvgPool {
                k: need(e.k, i, "k")?,
            },
            LayerKind::Flatten => ObfBlock::Flatten,
            LayerKind::Relu => ObfBlock::Relu,
            LayerKind::Gelu => ObfBlock::Gelu,
            LayerKind::Mha => ObfBlock::Mha {
                wq: r.mat(&name("wq"))?,
                wk: r.mat(&name("wk"))?,
                wv: r.mat(&name("wv"))?,
                wo: r.mat(&name("wo"))?,
                heads: need(e.heads, i, "heads")?,
            },
            LayerKind::LayerNorm => ObfBlock::LayerNorm {
                dim: need(e.dim, i, "dim")?,
            },
            LayerKind::Residual => ObfBlock::Residual {
                from: need(e.from, i, "from")?,
            },
            LayerKind::BatchNorm => {
                return Err(Error::Format(format!(
                    "layer {i}: bundles cannot hold batchnorm"
                )))
            }
        });
    }
    let weights = ObfWeights {
        input: r.manifest.input,
        tags: r.manifest.tags.clone(),
        blocks,
    };
    let otp = match r.manifest.inference {
        None => None,
        Some(inference) => {
            let mut mats = Vec::with_capacity(layers.len());
            for (i, e) in layers.iter().enumerate() {
                let name = |f: &str| format!("b{i}.{f}");
                mats.push(match e.kind {
                    LayerKind::Dense | LayerKind::Conv => BlockMaterials::Linear(LinearMaterials {
                        bias: r.mat(&name("bias"))?,
                        pad: if r.has(&name("pad")) {
                            Some(r.act(&name("pad"))?)
                        } else {
                            None
                        },
                    }),
                    LayerKind::Relu => BlockMaterials::Relu(ReluMaterials {
                        m1: r.mat(&name("m1"))?,
                        m2: r.mat(&name("m2"))?,
                        m1_inv: r.mat(&name("m1_inv"))?,
                        m2_inv: r.mat(&name("m2_inv"))?,
                        r2: r.mat(&name("r2"))?,
                    }),
                    LayerKind::Gelu => BlockMaterials::Gelu(GeluMaterials {
                        m1: r.mat(&name("m1"))?,
                        m2: r.mat(&name("m2"))?,
                        m3: r.mat(&name("m3"))?,
                        m4: r.mat(&name("m4"))?,
                        r2: r.mat(&name("r2"))?,
                    }),
                    LayerKind::LayerNorm => BlockMaterials::Norm(NormMaterials {
                        gadget: r.mat(&name("gadget"))?,
                        eps: r.scalar(&name("eps"))?,
                        affine_w: r.mat(&name("affine_w"))?,
                        affine_b: r.mat(&name("affine_b"))?,
                    }),
                    LayerKind::Mha => BlockMaterials::Attention(AttentionMaterials {
                        causal: if r.has(&name("causal")) {
                            Some(r.mat(&name("causal"))?)
                        } else {
                            None
                        },
                    }),
                    _ => BlockMaterials::None,
                });
            }
            Some(OtpMaterials {
                inference,
                blocks: mats,
            })
        }
    };
    let bundle = ObfBundle { weights, otp };
    bundle.validate()?;
    Ok(r.loaded::<_, T>(bundle))
}

pub fn input_to_bytes<T: Scalar>(x: &Act<T>) -> Vec<u8> {
    let shape = x.shape();
    let mut w = Writer::new(Artifact::Input, T::PRECISION, shape);
    let dims = match shape {
        Shape::Mat { rows, cols } => vec![rows, cols],
        Shape::T4 { dims } => dims.to_vec(),
    };
    w.push("x".into(), dims, x.as_slice());
    w.finish()
}

pub fn input_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Loaded<Act<T>>> {
    let r = Reader::parse(bytes, Artifact::Input)?;
    let x = r.act("x")?;
    if x.shape() != r.manifest.input {
        return Err(Error::Format(format!(
            "input tensor {} disagrees with manifest shape {}",
            x.shape(),
            r.manifest.input
        )));
    }
    Ok(r.loaded::<_, T>(x))
}

/// Everything needed to rebuild `enclave` bit-for-bit: its (prepared) model, seed,
/// configuration and the index of the next inference. A reproduction aid only.
pub fn secrets_to_bytes<T: Scalar>(enclave: &Enclave<T>) -> Vec<u8> {
    let model = enclave.model();
    let mut w = Writer::new(Artifact::Secrets, Precision::F64, model.input_shape());
    w.manifest.non_protocol = true;
    w.manifest.seed = Some(enclave.state().seed);
    w.manifest.config = Some(*enclave.config());
    w.manifest.next_inference = Some(enclave.inferences());
    write_model_layers(&mut w, model);
    w.finish()
}

/// Rebuilds the enclave and fast-forwards its one-time stream past every inference already
/// served, so no one-time pad is issued twice.
pub fn secrets_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Enclave<T>> {
    let r = Reader::parse(bytes, Artifact::Secrets)?;
    if !r.manifest.non_protocol {
        return Err(Error::Format(
            "enclave-state file is not marked non-protocol".into(),
        ));
    }
    let model: PlainModel<f64> = read_model_layers(&r)?;
    let seed = r
        .manifest
        .seed
        .ok_or_else(|| Error::Format("missing seed".into()))?;
    let config = r
        .manifest
        .config
        .ok_or_else(|| Error::Format("missing config".into()))?;
    let mut enclave = Enclave::new(&model.cast::<T>(), config, seed)?;
    enclave.resume_at(r.manifest.next_inference.unwrap_or(0))?;
    Ok(enclave)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_model<T: Scalar>(
    path: impl AsRef<Path>,
    model: &PlainModel<T>,
    seed: Option<u64>,
) -> Result<()> {
    write_file(path.as_ref(), &model_to_bytes(model, seed))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Loaded<PlainModel<T>>> {
    model_from_bytes(&read_file(path.as_ref())?)
}

pub fn save_bundle<T: Scalar>(path: impl AsRef<Path>, bundle: &ObfBundle<T>) -> Result<()> {
    write_file(path.as_ref(), &bundle_to_bytes(bundle))
}

pub fn load_bundle<T: Scalar>(path: impl AsRef<Path>) -> Result<Loaded<ObfBundle<T>>> {
    bundle_from_bytes(&read_file(path.as_ref())?)
}

pub fn save_input<T: Scalar>(path: impl AsRef<Path>, x: &Act<T>) -> Result<()> {
    write_file(path.as_ref(), &input_to_bytes(x))
}

pub fn load_input<T: Scalar>(path: impl AsRef<Path>) -> Result<Loaded<Act<T>>> {
    input_from_bytes(&read_file(path.as_ref())?)
}

pub fn save_secrets<T: Scalar>(path: impl AsRef<Path>, enclave: &Enclave<T>) -> Result<()> {
    write_file(path.as_ref(), &secrets_to_bytes(enclave))
}

pub fn load_secrets<T: Scalar>(path: impl AsRef<Path>) -> Result<Enclave<T>> {
    secrets_from_bytes(&read_file(path.as_ref())?)
}

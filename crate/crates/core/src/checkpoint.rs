//! The `HRFC` model container: architecture descriptor, named `f32` tensors
//! and free-form metadata.
//!
//! Tensor names follow a fixed scheme:
//!
//! | name                 | shape              |
//! |----------------------|--------------------|
//! | `layer.{i}.wq`       | `d × d`            |
//! | `layer.{i}.wk`       | `d × d`            |
//! | `layer.{i}.wv`       | `d × d`            |
//! | `layer.{i}.wo`       | `d × d`            |
//! | `layer.{i}.w1`       | `d × ffn`          |
//! | `layer.{i}.b1`       | `ffn`              |
//! | `layer.{i}.w2`       | `ffn × d`          |
//! | `layer.{i}.b2`       | `d`                |
//! | `layer.{i}.norm{1,2}.g` | `d`             |
//! | `layer.{i}.norm{1,2}.b` | `d` (layernorm only) |
//! | `embed.x`            | `vocab × d`        |
//! | `embed.pos`          | `max_positions × d` (learned positions only) |
//! | `softmax.e`          | `d × vocab` (untied only) |
//!
//! Weights act on row vectors: a hidden state `H` (`l × d`) is projected as
//! `H · W`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RNG_ALGORITHM};

pub const MAGIC: &[u8; 4] = b"HRFC";
pub const FORMAT_VERSION: u8 = 1;

pub const EMBED_X: &str = "embed.x";
pub const EMBED_POS: &str = "embed.pos";
pub const SOFTMAX_E: &str = "softmax.e";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    RmsNorm,
    LayerNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Silu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    None,
    LearnedAbsolute,
}

/// Per-layer tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerTensor {
    Wq,
    Wk,
    Wv,
    Wo,
    W1,
    B1,
    W2,
    B2,
    Norm1Gain,
    Norm1Bias,
    Norm2Gain,
    Norm2Bias,
}

impl LayerTensor {
    fn suffix(self) -> &'static str {
        match self {
            LayerTensor::Wq => "wq",
            LayerTensor::Wk => "wk",
            LayerTensor::Wv => "wv",
            LayerTensor::Wo => "wo",
            LayerTensor::W1 => "w1",
            LayerTensor::B1 => "b1",
            LayerTensor::W2 => "w2",
            LayerTensor::B2 => "b2",
            LayerTensor::Norm1Gain => "norm1.g",
            LayerTensor::Norm1Bias => "norm1.b",
            LayerTensor::Norm2Gain => "norm2.g",
            LayerTensor::Norm2Bias => "norm2.b",
        }
    }

    pub fn name(self, layer: usize) -> String {
        format!("layer.{layer}.{}", self.suffix())
    }
}

/// Normalization gains and biases. They are excluded from
/// [`flatten_parameters`].
pub fn is_norm_parameter(name: &str) -> bool {
    name.contains(".norm")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub num_layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub num_heads: usize,
    pub norm_kind: NormKind,
    pub activation: Activation,
    pub tied_embeddings: bool,
    pub positional_kind: PositionalKind,
    /// Rows of `embed.pos`; zero unless positions are learned.
    #[serde(default)]
    pub max_positions: usize,
}

impl ArchitectureDescriptor {
    /// Desk-scale defaults: rmsnorm, gelu, untied, no positional table.
    pub fn toy(num_layers: usize, model_dim: usize, vocab_size: usize, num_heads: usize) -> Self {
        ArchitectureDescriptor {
            num_layers,
            model_dim,
            ffn_dim: 4 * model_dim,
            vocab_size,
            num_heads,
            norm_kind: NormKind::RmsNorm,
            activation: Activation::Gelu,
            tied_embeddings: false,
            positional_kind: PositionalKind::None,
            max_positions: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("model_dim", self.model_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("num_heads", self.num_heads),
        ];
        for (what, n) in counts {
            if n == 0 {
                return Err(Error::InvalidCheckpoint(format!("{what} must be at least 1")));
            }
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::InvalidCheckpoint(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        match (self.positional_kind, self.max_positions) {
            (PositionalKind::LearnedAbsolute, 0) => Err(Error::InvalidCheckpoint(
                "learned positions need max_positions >= 1".into(),
            )),
            (PositionalKind::None, n) if n != 0 => Err(Error::InvalidCheckpoint(
                "max_positions set without a positional table".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Every tensor name the architecture implies, with its shape, sorted by
    /// name.
    pub fn tensor_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let (d, f, v) = (self.model_dim, self.ffn_dim, self.vocab_size);
        let mut out = BTreeMap::new();
        for i in 0..self.num_layers {
            use LayerTensor::*;
            for (t, shape) in [
                (Wq, vec![d, d]),
                (Wk, vec![d, d]),
                (Wv, vec![d, d]),
                (Wo, vec![d, d]),
                (W1, vec![d, f]),
                (B1, vec![f]),
                (W2, vec![f, d]),
                (B2, vec![d]),
                (Norm1Gain, vec![d]),
                (Norm2Gain, vec![d]),
            ] {
                out.insert(t.name(i), shape);
            }
            if self.norm_kind == NormKind::LayerNorm {
                out.insert(Norm1Bias.name(i), vec![d]);
                out.insert(Norm2Bias.name(i), vec![d]);
            }
        }
        out.insert(EMBED_X.to_string(), vec![v, d]);
        if self.positional_kind == PositionalKind::LearnedAbsolute {
            out.insert(EMBED_POS.to_string(), vec![self.max_positions, d]);
        }
        if !self.tied_embeddings {
            out.insert(SOFTMAX_E.to_string(), vec![d, v]);
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("descriptor serializes"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        TensorRecord {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn from_matrix(name: impl Into<String>, m: Matrix) -> Self {
        let shape = vec![m.rows(), m.cols()];
        TensorRecord::new(name, shape, m.into_vec())
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape.as_slice() {
            &[r, c] => Matrix::from_vec(r, c, self.data.clone()),
            other => Err(Error::dims(
                format!("tensor `{}` as matrix", self.name),
                "2 dimensions",
                other,
            )),
        }
    }
}

/// Architecture, tensors keyed (and therefore ordered) by name, metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    arch: ArchitectureDescriptor,
    tensors: BTreeMap<String, TensorRecord>,
    metadata: BTreeMap<String, String>,
}

impl ModelCheckpoint {
    /// Builds and fully validates a checkpoint.
    pub fn new(
        arch: ArchitectureDescriptor,
        tensors: impl IntoIterator<Item = TensorRecord>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in tensors {
            if map.contains_key(&t.name) {
                return Err(Error::DuplicateTensor(t.name));
            }
            map.insert(t.name.clone(), t);
        }
        let ckpt = ModelCheckpoint {
            arch,
            tensors: map,
            metadata,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let expected = self.arch.tensor_shapes();
        for (name, shape) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if &t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    actual: t.shape.clone(),
                });
            }
            if t.data.len() != t.numel() {
                return Err(Error::InvalidCheckpoint(format!(
                    "tensor `{name}` holds {} values for shape {:?}",
                    t.data.len(),
                    t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor `{name}`")));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|n| !expected.contains_key(*n)) {
            return Err(Error::UnexpectedTensor(extra.clone()));
        }
        Ok(())
    }

    pub fn arch(&self) -> &ArchitectureDescriptor {
        &self.arch
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    /// Tensors in canonical (lexicographic) name order.
    pub fn tensors(&self) -> impl Iterator<Item = &TensorRecord> {
        self.tensors.values()
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorRecord> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        self.tensor(name)?.to_matrix()
    }

    pub fn layer_matrix(&self, layer: usize, which: LayerTensor) -> Result<Matrix> {
        self.matrix(&which.name(layer))
    }

    /// The output projection `E` (`d × vocab`); `embed.xᵀ` when tied.
    pub fn softmax_matrix(&self) -> Result<Matrix> {
        if self.arch.tied_embeddings {
            Ok(self.matrix(EMBED_X)?.transpose())
        } else {
            self.matrix(SOFTMAX_E)
        }
    }

    /// Replaces the architecture and tensors wholesale, revalidating.
    pub fn rebuild(
        &self,
        arch: ArchitectureDescriptor,
        tensors: impl IntoIterator<Item = TensorRecord>,
    ) -> Result<ModelCheckpoint> {
        ModelCheckpoint::new(arch, tensors, self.metadata.clone())
    }

    /// Parameter count across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(TensorRecord::numel).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let records: Vec<&TensorRecord> = self.tensors.values().collect();
        let offsets = container::blob_offsets(records.iter().map(|t| t.numel() * 4));
        let header = Header {
            format: "HRFC".into(),
            rng: RNG_ALGORITHM.into(),
            arch: self.arch,
            metadata: self.metadata.clone(),
            tensors: records
                .iter()
                .zip(&offsets)
                .map(|(t, &offset)| IndexEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    nbytes: (t.numel() * 4) as u64,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let blobs: Vec<Vec<u8>> = records.iter().map(|t| container::f32s_to_le(&t.data)).collect();
        let blob_refs: Vec<&[u8]> = blobs.iter().map(Vec::as_slice).collect();
        Ok(container::encode(MAGIC, FORMAT_VERSION, &header, &blob_refs))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint> {
        let framed = container::decode(bytes, MAGIC, &[FORMAT_VERSION])?;
        let header: Header = serde_json::from_slice(framed.header)?;
        let mut seen = BTreeSet::new();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            if !seen.insert(entry.name.as_str()) {
                return Err(Error::DuplicateTensor(entry.name.clone()));
            }
            let numel: usize = entry.shape.iter().product();
            if entry.nbytes != numel as u64 * 4 {
                return Err(Error::InvalidCheckpoint(format!(
                    "tensor `{}` declares {} bytes for shape {:?}",
                    entry.name, entry.nbytes, entry.shape
                )));
            }
            let blob = framed.blob(&entry.name, entry.offset, entry.nbytes)?;
            tensors.push(TensorRecord::new(
                entry.name.clone(),
                entry.shape.clone(),
                container::le_to_f32s(blob),
            ));
        }
        ModelCheckpoint::new(header.arch, tensors, header.metadata)
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    rng: String,
    arch: ArchitectureDescriptor,
    metadata: BTreeMap<String, String>,
    tensors: Vec<IndexEntry>,
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes(&fs::read(path)?)
}

/// Writes the canonical serialization; identical checkpoints give identical
/// bytes.
pub fn write_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Weight matrices and biases concatenated in canonical name order, row-major
/// per tensor. Normalization gains and biases are left out: they are
/// initialized to constants, and at desk scale their shared value would
/// dominate the direction of the vector.
pub fn flatten_parameters(ckpt: &ModelCheckpoint) -> Vec<f32> {
    let mut out = Vec::with_capacity(ckpt.numel());
    for t in ckpt.tensors().filter(|t| !is_norm_parameter(&t.name)) {
        out.extend_from_slice(&t.data);
    }
    out
}

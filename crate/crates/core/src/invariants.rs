//! Attack-invariant weight products and the two similarity scores.
//!
//! For each layer and the anchor embedding rows `X̂` (`K × d`):
//!
//! ```text
//! M_a = (X̂ W_Q)(X̂ W_K)ᵀ
//! M_b = ((X̂ W_V) W_O) X̂ᵀ
//! M_f = ((X̂ W_1) W_2) X̂ᵀ
//! ```
//!
//! All products are accumulated in `f64` and stored as `f32`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{flatten_parameters, LayerTensor, ModelCheckpoint};
use crate::container;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, matmul_f64, Matrix};
use crate::vocab::{build_x_hat, AnchorSet};

pub const MAGIC: &[u8; 4] = b"HRIT";
pub const FORMAT_VERSION: u8 = 1;
pub const TERMS_PER_LAYER: usize = 3;
pub const DEFAULT_LAYER_SPAN: usize = 2;
pub const LAYOUT: &str = "channel-major; channel = 3*i + t for the i-th selected layer (ascending) \
and term t in (attention-qk, attention-vo, ffn); row-major K x K within a channel";

/// The three `K × K` terms of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTerms {
    pub attention_qk: Matrix,
    pub attention_vo: Matrix,
    pub ffn: Matrix,
}

fn transpose_f64(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// The three invariant terms of `layer` projected through `x_hat`.
pub fn invariant_terms_for_layer(ckpt: &ModelCheckpoint, layer: usize, x_hat: &Matrix) -> Result<LayerTerms> {
    let arch = ckpt.arch();
    if layer >= arch.num_layers {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range for {} layers",
            arch.num_layers
        )));
    }
    let (k, d) = x_hat.shape();
    if d != arch.model_dim {
        return Err(Error::dims("anchor rows width", arch.model_dim, d));
    }
    let f = arch.ffn_dim;
    let x = x_hat.to_f64();
    let xt = transpose_f64(&x, k, d);
    let w = |which| ckpt.layer_matrix(layer, which).map(|m| m.to_f64());

    let q = matmul_f64(&x, &w(LayerTensor::Wq)?, k, d, d);
    let kk = matmul_f64(&x, &w(LayerTensor::Wk)?, k, d, d);
    let qk = matmul_f64(&q, &transpose_f64(&kk, k, d), k, d, k);

    let v = matmul_f64(&x, &w(LayerTensor::Wv)?, k, d, d);
    let vo = matmul_f64(&v, &w(LayerTensor::Wo)?, k, d, d);
    let vo = matmul_f64(&vo, &xt, k, d, k);

    let h = matmul_f64(&x, &w(LayerTensor::W1)?, k, d, f);
    let hf = matmul_f64(&h, &w(LayerTensor::W2)?, k, f, d);
    let ff = matmul_f64(&hf, &xt, k, d, k);

    Ok(LayerTerms {
        attention_qk: Matrix::from_f64(k, k, &qk)?,
        attention_vo: Matrix::from_f64(k, k, &vo)?,
        ffn: Matrix::from_f64(k, k, &ff)?,
    })
}

/// Stacked invariant terms of the last `r` layers.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantTensor {
    k: usize,
    channels: usize,
    layer_span: Vec<usize>,
    anchor_hash: String,
    corpus_hash: String,
    data: Vec<f32>,
}

impl InvariantTensor {
    pub fn new(
        k: usize,
        layer_span: Vec<usize>,
        anchor_hash: String,
        corpus_hash: String,
        data: Vec<f32>,
    ) -> Result<Self> {
        let channels = TERMS_PER_LAYER * layer_span.len();
        if k == 0 || layer_span.is_empty() {
            return Err(Error::EmptyInput);
        }
        if data.len() != k * k * channels {
            return Err(Error::dims("invariant tensor data", k * k * channels, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("invariant tensor".into()));
        }
        if layer_span.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("layer span must be strictly ascending".into()));
        }
        Ok(InvariantTensor {
            k,
            channels,
            layer_span,
            anchor_hash,
            corpus_hash,
            data,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layer_span(&self) -> &[usize] {
        &self.layer_span
    }

    pub fn anchor_hash(&self) -> &str {
        &self.anchor_hash
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// Channel-major values, `K × K` row-major per channel.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let kk = self.k * self.k;
        &self.data[c * kk..(c + 1) * kk]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: "HRIT".into(),
            k: self.k,
            channels: self.channels,
            layer_span: self.layer_span.clone(),
            anchor_hash: self.anchor_hash.clone(),
            corpus_hash: self.corpus_hash.clone(),
            layout: LAYOUT.into(),
            dtype: "f32le".into(),
            offset: 0,
            nbytes: (self.data.len() * 4) as u64,
        };
        let header = serde_json::to_vec(&header)?;
        let blob = container::f32s_to_le(&self.data);
        Ok(container::encode(MAGIC, FORMAT_VERSION, &header, &[&blob]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let framed = container::decode(bytes, MAGIC, &[FORMAT_VERSION])?;
        let h: Header = serde_json::from_slice(framed.header)?;
        if h.layout != LAYOUT || h.dtype != "f32le" {
            return Err(Error::MalformedHeader(format!("unknown layout `{}` / dtype `{}`", h.layout, h.dtype)));
        }
        if h.channels != TERMS_PER_LAYER * h.layer_span.len() {
            return Err(Error::MalformedHeader(format!(
                "{} channels for {} layers",
                h.channels,
                h.layer_span.len()
            )));
        }
        let blob = framed.blob("invariants", h.offset, h.nbytes)?;
        InvariantTensor::new(h.k, h.layer_span, h.anchor_hash, h.corpus_hash, container::le_to_f32s(blob))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    k: usize,
    channels: usize,
    layer_span: Vec<usize>,
    anchor_hash: String,
    corpus_hash: String,
    layout: String,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

/// Invariant terms of the last `r` layers, stacked in ascending layer order.
pub fn stack_invariants(ckpt: &ModelCheckpoint, anchors: &AnchorSet, r: usize) -> Result<InvariantTensor> {
    let n = ckpt.arch().num_layers;
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!(
            "layer span {r} must be in 1..={n}"
        )));
    }
    let x_hat = build_x_hat(ckpt, anchors)?;
    let span: Vec<usize> = (n - r..n).collect();
    let per_layer = span
        .par_iter()
        .map(|&l| invariant_terms_for_layer(ckpt, l, &x_hat))
        .collect::<Result<Vec<_>>>()?;
    let k = anchors.k();
    let mut data = Vec::with_capacity(k * k * TERMS_PER_LAYER * r);
    for t in &per_layer {
        data.extend_from_slice(t.attention_qk.as_slice());
        data.extend_from_slice(t.attention_vo.as_slice());
        data.extend_from_slice(t.ffn.as_slice());
    }
    InvariantTensor::new(k, span, anchors.hash(), anchors.corpus_id().to_string(), data)
}

/// Parameter cosine similarity as a percentage.
pub fn pcs(a: &ModelCheckpoint, b: &ModelCheckpoint) -> Result<f64> {
    let shapes = |c: &ModelCheckpoint| -> Vec<(String, Vec<usize>)> {
        c.tensors().map(|t| (t.name.clone(), t.shape.clone())).collect()
    };
    if shapes(a) != shapes(b) {
        return Err(Error::Incomparable(
            "checkpoints have different tensor names or shapes".into(),
        ));
    }
    Ok(100.0 * cosine_similarity(&flatten_parameters(a), &flatten_parameters(b))?)
}

/// Invariant-term cosine similarity as a percentage.
///
/// Both tensors must share `K`, channel count and anchor hash. A differing
/// corpus hash is not an error; see [`corpus_mismatch`].
pub fn ics(a: &InvariantTensor, b: &InvariantTensor) -> Result<f64> {
    if a.k != b.k || a.channels != b.channels {
        return Err(Error::Incomparable(format!(
            "K×K×C {}×{}×{} vs {}×{}×{}",
            a.k, a.k, a.channels, b.k, b.k, b.channels
        )));
    }
    if a.anchor_hash != b.anchor_hash {
        return Err(Error::Incomparable("anchor sets differ".into()));
    }
    Ok(100.0 * cosine_similarity(&a.data, &b.data)?)
}

pub fn corpus_mismatch(a: &InvariantTensor, b: &InvariantTensor) -> bool {
    a.corpus_hash != b.corpus_hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{ArchitectureDescriptor, TensorRecord};
    use crate::model::generate_random_model;
    use crate::numerics::Rng;

    fn with_layer0(ckpt: &ModelCheckpoint, name: LayerTensor, m: Matrix) -> ModelCheckpoint {
        let tensors = ckpt.tensors().map(|t| {
            if t.name == name.name(0) {
                TensorRecord::from_matrix(t.name.clone(), m.clone())
            } else {
                t.clone()
            }
        });
        ckpt.rebuild(*ckpt.arch(), tensors).unwrap()
    }

    #[test]
    fn hand_example_2x2() {
        let arch = ArchitectureDescriptor::toy(1, 2, 4, 1);
        let base = generate_random_model(&arch, &mut Rng::new(0)).unwrap();
        let base = with_layer0(&base, LayerTensor::Wq, Matrix::from_vec(2, 2, vec![1., 2., 0., 1.]).unwrap());
        let base = with_layer0(&base, LayerTensor::Wk, Matrix::identity(2));
        let t = invariant_terms_for_layer(&base, 0, &Matrix::identity(2)).unwrap();
        // I·[[1,2],[0,1]]·Iᵀ·Iᵀ by hand.
        assert_eq!(t.attention_qk.as_slice(), &[1., 2., 0., 1.]);
        let base = with_layer0(&base, LayerTensor::Wk, Matrix::from_vec(2, 2, vec![1., 2., 0., 1.]).unwrap());
        let base = with_layer0(&base, LayerTensor::Wq, Matrix::identity(2));
        let t = invariant_terms_for_layer(&base, 0, &Matrix::identity(2)).unwrap();
        assert_eq!(t.attention_qk.as_slice(), &[1., 0., 2., 1.]);
    }

    #[test]
    fn identity_anchor_gives_weight_products() {
        let arch = ArchitectureDescriptor::toy(1, 6, 12, 2);
        let ckpt = generate_random_model(&arch, &mut Rng::new(3)).unwrap();
        let t = invariant_terms_for_layer(&ckpt, 0, &Matrix::identity(6)).unwrap();
        let wq = ckpt.layer_matrix(0, LayerTensor::Wq).unwrap();
        let wk = ckpt.layer_matrix(0, LayerTensor::Wk).unwrap();
        assert_eq!(t.attention_qk, wq.matmul_transposed(&wk).unwrap());
        let wv = ckpt.layer_matrix(0, LayerTensor::Wv).unwrap();
        let wo = ckpt.layer_matrix(0, LayerTensor::Wo).unwrap();
        let vo = wv.matmul(&wo).unwrap();
        assert!(t.attention_vo.max_abs_diff(&vo).unwrap() < 1e-7);
    }

    #[test]
    fn stacking_counts_and_order() {
        let arch = ArchitectureDescriptor::toy(3, 8, 32, 2);
        let ckpt = generate_random_model(&arch, &mut Rng::new(5)).unwrap();
        let anchors = AnchorSet::new(vec![1, 4, 9, 20]).unwrap();
        let t = stack_invariants(&ckpt, &anchors, 2).unwrap();
        assert_eq!((t.k(), t.channels(), t.layer_span()), (4, 6, &[1usize, 2][..]));
        let x = build_x_hat(&ckpt, &anchors).unwrap();
        let l2 = invariant_terms_for_layer(&ckpt, 2, &x).unwrap();
        assert_eq!(t.channel(5), l2.ffn.as_slice());
        assert_eq!(t.channel(3), l2.attention_qk.as_slice());
        assert_eq!(stack_invariants(&ckpt, &anchors, 2).unwrap(), t);
        assert_eq!(stack_invariants(&ckpt, &anchors, 1).unwrap().channels(), 3);
        assert!(stack_invariants(&ckpt, &anchors, 4).is_err());
        assert!(stack_invariants(&ckpt, &anchors, 0).is_err());
    }

    #[test]
    fn self_similarity_is_exact() {
        let arch = ArchitectureDescriptor::toy(2, 8, 32, 2);
        let ckpt = generate_random_model(&arch, &mut Rng::new(5)).unwrap();
        assert_eq!(pcs(&ckpt, &ckpt).unwrap(), 100.0);
        let t = stack_invariants(&ckpt, &AnchorSet::new(vec![0, 3, 5]).unwrap(), 2).unwrap();
        assert_eq!(ics(&t, &t).unwrap(), 100.0);
    }

    #[test]
    fn mismatches_are_incomparable() {
        let a = generate_random_model(&ArchitectureDescriptor::toy(2, 8, 32, 2), &mut Rng::new(1)).unwrap();
        let b = generate_random_model(&ArchitectureDescriptor::toy(2, 8, 40, 2), &mut Rng::new(1)).unwrap();
        assert!(matches!(pcs(&a, &b), Err(Error::Incomparable(_))));
        let t1 = stack_invariants(&a, &AnchorSet::new(vec![0, 3, 5]).unwrap(), 2).unwrap();
        let t2 = stack_invariants(&a, &AnchorSet::new(vec![0, 3]).unwrap(), 2).unwrap();
        let t3 = stack_invariants(&a, &AnchorSet::new(vec![0, 3, 6]).unwrap(), 2).unwrap();
        assert!(matches!(ics(&t1, &t2), Err(Error::Incomparable(_))));
        assert!(matches!(ics(&t1, &t3), Err(Error::Incomparable(_))));
    }

    #[test]
    fn file_roundtrip() {
        let arch = ArchitectureDescriptor::toy(2, 8, 32, 2);
        let ckpt = generate_random_model(&arch, &mut Rng::new(5)).unwrap();
        let anchors = AnchorSet::new(vec![0, 3, 5]).unwrap().with_corpus_id("abc");
        let t = stack_invariants(&ckpt, &anchors, 2).unwrap();
        let bytes = t.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"HRIT");
        let back = InvariantTensor::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.corpus_hash(), "abc");
        assert!(InvariantTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

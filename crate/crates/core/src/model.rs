//! Reference transformer forward pass, used to confirm that camouflaged
//! checkpoints compute the same function as their originals.
//!
//! Each layer is pre-norm with residual connections around both sublayers:
//!
//! ```text
//! H ← H + softmax_causal(N₁(H) W_Q (N₁(H) W_K)ᵀ / √d_head) N₁(H) W_V · W_O   (per head)
//! H ← H + σ(N₂(H) W_1 + b_1) W_2 + b_2
//! P  = softmax(H_N E)
//! ```
//!
//! Everything is evaluated in `f64`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::checkpoint::{
    Activation, ArchitectureDescriptor, LayerTensor, ModelCheckpoint, NormKind, PositionalKind,
    TensorRecord, EMBED_POS, EMBED_X, SOFTMAX_E,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

const NORM_EPS: f64 = 1e-5;

/// Standard deviation of freshly generated weights.
pub const INIT_STD: f64 = 0.02;

/// Token sequences sharing one length.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBatch {
    sequences: Vec<Vec<u32>>,
}

impl ProbeBatch {
    pub fn new(sequences: Vec<Vec<u32>>) -> Result<Self> {
        let l = sequences.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        if l == 0 {
            return Err(Error::InvalidArgument("sequence length must be at least 1".into()));
        }
        if let Some(s) = sequences.iter().find(|s| s.len() != l) {
            return Err(Error::dims("probe sequence length", l, s.len()));
        }
        Ok(ProbeBatch { sequences })
    }

    /// `count` uniformly random sequences of length `seq_len`.
    pub fn random(rng: &mut Rng, count: usize, seq_len: usize, vocab_size: usize) -> Result<Self> {
        let sequences = (0..count)
            .map(|_| (0..seq_len).map(|_| rng.below(vocab_size) as u32).collect())
            .collect();
        ProbeBatch::new(sequences)
    }

    pub fn seq_len(&self) -> usize {
        self.sequences[0].len()
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }
}

/// Logits (`l × vocab`) and the output distribution for one sequence.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub probs: Matrix,
}

/// Intermediate values captured during a traced forward pass.
#[derive(Debug, Clone, Default)]
pub struct HiddenTrace {
    /// `H_0 … H_N`, each `l × d`.
    pub hidden: Vec<Matrix>,
    /// Per layer, the attention sublayer output before the residual add.
    pub attention_out: Vec<Matrix>,
    /// Per layer and head, the `l × l` attention probabilities.
    pub attention_probs: Vec<Vec<Matrix>>,
}

struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    fn from_record(t: &TensorRecord) -> Dense {
        let (rows, cols) = match t.shape.as_slice() {
            &[r, c] => (r, c),
            &[n] => (1, n),
            _ => unreachable!("validated checkpoint"),
        };
        Dense {
            rows,
            cols,
            data: t.data.iter().map(|&v| v as f64).collect(),
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `x (l × rows) · self`.
    fn apply(&self, x: &[f64], l: usize) -> Vec<f64> {
        crate::numerics::matmul_f64(x, &self.data, l, self.rows, self.cols)
    }
}

struct Layer {
    wq: Dense,
    wk: Dense,
    wv: Dense,
    wo: Dense,
    w1: Dense,
    b1: Vec<f64>,
    w2: Dense,
    b2: Vec<f64>,
    norm1: (Vec<f64>, Option<Vec<f64>>),
    norm2: (Vec<f64>, Option<Vec<f64>>),
}

/// A checkpoint converted once to `f64` for repeated evaluation.
pub struct PreparedModel {
    arch: ArchitectureDescriptor,
    embed: Dense,
    pos: Option<Dense>,
    softmax: Dense,
    layers: Vec<Layer>,
}

impl PreparedModel {
    pub fn new(ckpt: &ModelCheckpoint) -> Result<Self> {
        ckpt.validate()?;
        let arch = *ckpt.arch();
        let dense = |name: &str| ckpt.tensor(name).map(Dense::from_record);
        let vec = |name: &str| -> Result<Vec<f64>> {
            Ok(ckpt.tensor(name)?.data.iter().map(|&v| v as f64).collect())
        };
        let mut layers = Vec::with_capacity(arch.num_layers);
        for i in 0..arch.num_layers {
            use LayerTensor::*;
            let bias = |t: LayerTensor| -> Result<Option<Vec<f64>>> {
                match arch.norm_kind {
                    NormKind::LayerNorm => vec(&t.name(i)).map(Some),
                    NormKind::RmsNorm => Ok(None),
                }
            };
            layers.push(Layer {
                wq: dense(&Wq.name(i))?,
                wk: dense(&Wk.name(i))?,
                wv: dense(&Wv.name(i))?,
                wo: dense(&Wo.name(i))?,
                w1: dense(&W1.name(i))?,
                b1: vec(&B1.name(i))?,
                w2: dense(&W2.name(i))?,
                b2: vec(&B2.name(i))?,
                norm1: (vec(&Norm1Gain.name(i))?, bias(Norm1Bias)?),
                norm2: (vec(&Norm2Gain.name(i))?, bias(Norm2Bias)?),
            });
        }
        let softmax = if arch.tied_embeddings {
            let x = ckpt.matrix(EMBED_X)?.transpose();
            Dense {
                rows: x.rows(),
                cols: x.cols(),
                data: x.to_f64(),
            }
        } else {
            dense(SOFTMAX_E)?
        };
        let pos = match arch.positional_kind {
            PositionalKind::LearnedAbsolute => Some(dense(EMBED_POS)?),
            PositionalKind::None => None,
        };
        Ok(PreparedModel {
            arch,
            embed: dense(EMBED_X)?,
            pos,
            softmax,
            layers,
        })
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardOutput> {
        self.run(tokens, None)
    }

    pub fn forward_traced(&self, tokens: &[u32]) -> Result<(ForwardOutput, HiddenTrace)> {
        let mut trace = HiddenTrace::default();
        let out = self.run(tokens, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn run(&self, tokens: &[u32], mut trace: Option<&mut HiddenTrace>) -> Result<ForwardOutput> {
        let arch = &self.arch;
        let (d, v) = (arch.model_dim, arch.vocab_size);
        let l = tokens.len();
        if l == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(p) = &self.pos {
            if l > p.rows {
                return Err(Error::InvalidArgument(format!(
                    "sequence length {l} exceeds {} learned positions",
                    p.rows
                )));
            }
        }
        let mut h = Vec::with_capacity(l * d);
        for (t, &id) in tokens.iter().enumerate() {
            if id as usize >= v {
                return Err(Error::TokenOutOfRange { id, vocab_size: v });
            }
            let row = self.embed.row(id as usize);
            match &self.pos {
                Some(p) => h.extend(row.iter().zip(p.row(t)).map(|(a, b)| a + b)),
                None => h.extend_from_slice(row),
            }
        }
        let snapshot = |h: &[f64], rows: usize, cols: usize| {
            Matrix::from_f64(rows, cols, h).map_err(|_| Error::NonFinite("hidden state".into()))
        };
        if let Some(t) = trace.as_deref_mut() {
            t.hidden.push(snapshot(&h, l, d)?);
        }
        let heads = arch.num_heads;
        let dh = arch.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for (li, layer) in self.layers.iter().enumerate() {
            let a = normalize(&h, l, d, arch.norm_kind, &layer.norm1);
            let q = layer.wq.apply(&a, l);
            let k = layer.wk.apply(&a, l);
            let vv = layer.wv.apply(&a, l);
            let mut concat = vec![0.0f64; l * d];
            let mut head_probs = Vec::new();
            for hd in 0..heads {
                let off = hd * dh;
                let mut probs = vec![0.0f64; l * l];
                for i in 0..l {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let row = &mut probs[i * l..(i + 1) * l];
                    for j in 0..=i {
                        let kj = &k[j * d + off..j * d + off + dh];
                        row[j] = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax_in_place(&mut row[..=i]);
                    for j in 0..=i {
                        let p = row[j];
                        let vj = &vv[j * d + off..j * d + off + dh];
                        for (c, &x) in concat[i * d + off..i * d + off + dh].iter_mut().zip(vj) {
                            *c += p * x;
                        }
                    }
                }
                if trace.is_some() {
                    head_probs.push(snapshot(&probs, l, l)?);
                }
            }
            let attn = layer.wo.apply(&concat, l);
            check_finite(&attn, || format!("layer {li} attention"))?;
            if let Some(t) = trace.as_deref_mut() {
                t.attention_out.push(snapshot(&attn, l, d)?);
                t.attention_probs.push(head_probs);
            }
            for (x, y) in h.iter_mut().zip(&attn) {
                *x += y;
            }
            let f_in = normalize(&h, l, d, arch.norm_kind, &layer.norm2);
            let mut mid = layer.w1.apply(&f_in, l);
            for (i, x) in mid.iter_mut().enumerate() {
                *x = activate(arch.activation, *x + layer.b1[i % arch.ffn_dim]);
            }
            let out = layer.w2.apply(&mid, l);
            for (i, (x, y)) in h.iter_mut().zip(&out).enumerate() {
                *x += y + layer.b2[i % d];
            }
            check_finite(&h, || format!("layer {li} output"))?;
            if let Some(t) = trace.as_deref_mut() {
                t.hidden.push(snapshot(&h, l, d)?);
            }
        }
        let logits = self.softmax.apply(&h, l);
        check_finite(&logits, || "logits".to_string())?;
        let mut probs = logits.clone();
        for row in probs.chunks_mut(v) {
            softmax_in_place(row);
        }
        Ok(ForwardOutput {
            logits: Matrix::from_f64(l, v, &logits)?,
            probs: Matrix::from_f64(l, v, &probs)?,
        })
    }
}

fn check_finite(xs: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

fn normalize(
    h: &[f64],
    l: usize,
    d: usize,
    kind: NormKind,
    (gain, bias): &(Vec<f64>, Option<Vec<f64>>),
) -> Vec<f64> {
    let mut out = Vec::with_capacity(l * d);
    for row in h.chunks(d).take(l) {
        match kind {
            NormKind::RmsNorm => {
                let ms = row.iter().map(|x| x * x).sum::<f64>() / d as f64;
                let inv = 1.0 / (ms + NORM_EPS).sqrt();
                out.extend(row.iter().zip(gain).map(|(x, g)| x * inv * g));
            }
            NormKind::LayerNorm => {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                let b = bias.as_ref().expect("layernorm bias");
                out.extend(
                    row.iter()
                        .zip(gain)
                        .zip(b)
                        .map(|((x, g), b)| (x - mean) * inv * g + b),
                );
            }
        }
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        // tanh approximation
        Activation::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
        }
        Activation::Relu => x.max(0.0),
        Activation::Silu => x / (1.0 + (-x).exp()),
    }
}

/// Forward pass for a single sequence.
pub fn forward(ckpt: &ModelCheckpoint, tokens: &[u32]) -> Result<ForwardOutput> {
    PreparedModel::new(ckpt)?.forward(tokens)
}

/// Forward pass for every sequence of a probe batch, evaluated in parallel.
pub fn forward_batch(ckpt: &ModelCheckpoint, probes: &ProbeBatch) -> Result<Vec<ForwardOutput>> {
    let model = PreparedModel::new(ckpt)?;
    probes
        .sequences()
        .par_iter()
        .map(|s| model.forward(s))
        .collect()
}

/// Weights `N(0, 0.02²)`, norm gains 1, all biases 0. Tensors are drawn in
/// canonical name order from a single stream.
pub fn generate_random_model(arch: &ArchitectureDescriptor, rng: &mut Rng) -> Result<ModelCheckpoint> {
    arch.validate()?;
    let mut tensors = Vec::new();
    for (name, shape) in arch.tensor_shapes() {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if name.ends_with(".g") {
            vec![1.0; n]
        } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            vec![0.0; n]
        } else {
            (0..n).map(|_| (INIT_STD * rng.normal()) as f32).collect()
        };
        tensors.push(TensorRecord::new(name, shape, data));
    }
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), rng.seed().to_string());
    meta.insert("origin".to_string(), "random".to_string());
    ModelCheckpoint::new(*arch, tensors, meta)
}

/// Adds `N(0, (rel · rms)²)` noise to every tensor, where `rms` is that
/// tensor's root-mean-square value. All-zero tensors are left alone.
pub fn perturb_checkpoint(ckpt: &ModelCheckpoint, rel: f64, rng: &mut Rng) -> Result<ModelCheckpoint> {
    let tensors: Vec<TensorRecord> = ckpt
        .tensors()
        .map(|t| {
            let rms = (t.data.iter().map(|&v| v as f64 * v as f64).sum::<f64>()
                / t.data.len().max(1) as f64)
                .sqrt();
            let data = if rms == 0.0 {
                t.data.clone()
            } else {
                let std = rel * rms;
                t.data.iter().map(|&v| (v as f64 + std * rng.normal()) as f32).collect()
            };
            TensorRecord::new(t.name.clone(), t.shape.clone(), data)
        })
        .collect();
    ckpt.rebuild(*ckpt.arch(), tensors)
}

/// Appends `extra` new vocabulary entries: fresh rows of `embed.x` and fresh
/// columns of `softmax.e`, drawn `N(0, 0.02²)`.
pub fn augment_vocabulary(ckpt: &ModelCheckpoint, extra: usize, rng: &mut Rng) -> Result<ModelCheckpoint> {
    let mut arch = *ckpt.arch();
    let (d, v) = (arch.model_dim, arch.vocab_size);
    arch.vocab_size = v + extra;
    let mut tensors = Vec::new();
    for t in ckpt.tensors() {
        let rec = match t.name.as_str() {
            EMBED_X => {
                let mut data = t.data.clone();
                data.extend((0..extra * d).map(|_| (INIT_STD * rng.normal()) as f32));
                TensorRecord::new(EMBED_X, vec![v + extra, d], data)
            }
            SOFTMAX_E => {
                let mut data = Vec::with_capacity(d * (v + extra));
                for r in 0..d {
                    data.extend_from_slice(&t.data[r * v..(r + 1) * v]);
                    data.extend((0..extra).map(|_| (INIT_STD * rng.normal()) as f32));
                }
                TensorRecord::new(SOFTMAX_E, vec![d, v + extra], data)
            }
            _ => t.clone(),
        };
        tensors.push(rec);
    }
    ckpt.rebuild(arch, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::flatten_parameters;
    use crate::numerics::cosine_similarity;

    fn zero_model(arch: ArchitectureDescriptor) -> ModelCheckpoint {
        let tensors = arch.tensor_shapes().into_iter().map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let fill = if name.ends_with(".g") { 1.0 } else { 0.0 };
            TensorRecord::new(name, shape, vec![fill; n])
        });
        ModelCheckpoint::new(arch, tensors, BTreeMap::new()).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let arch = ArchitectureDescriptor::toy(2, 8, 16, 2);
        let out = forward(&zero_model(arch), &[1, 2, 3]).unwrap();
        for &p in out.probs.as_slice() {
            assert!((p as f64 - 1.0 / 16.0).abs() < 1e-7);
        }
    }

    #[test]
    fn rows_normalize_everywhere() {
        let mut arch = ArchitectureDescriptor::toy(2, 16, 32, 4);
        arch.norm_kind = NormKind::LayerNorm;
        let ckpt = generate_random_model(&arch, &mut Rng::new(1)).unwrap();
        let model = PreparedModel::new(&ckpt).unwrap();
        let (out, trace) = model.forward_traced(&[0, 5, 9, 31, 2]).unwrap();
        for r in 0..5 {
            let s: f64 = out.probs.row(r).iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert_eq!(trace.hidden.len(), 3);
        for layer in &trace.attention_probs {
            assert_eq!(layer.len(), 4);
            for head in layer {
                for r in 0..5 {
                    let s: f64 = head.row(r).iter().map(|&p| p as f64).sum();
                    assert!((s - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn out_of_range_token_is_an_error() {
        let arch = ArchitectureDescriptor::toy(1, 8, 16, 1);
        let ckpt = generate_random_model(&arch, &mut Rng::new(1)).unwrap();
        assert!(matches!(
            forward(&ckpt, &[16]),
            Err(Error::TokenOutOfRange { id: 16, .. })
        ));
    }

    #[test]
    fn batch_matches_single_and_is_order_independent() {
        let arch = ArchitectureDescriptor::toy(1, 8, 16, 2);
        let ckpt = generate_random_model(&arch, &mut Rng::new(4)).unwrap();
        let probes = ProbeBatch::random(&mut Rng::new(5), 3, 4, 16).unwrap();
        let outs = forward_batch(&ckpt, &probes).unwrap();
        let mut rev = probes.sequences().to_vec();
        rev.reverse();
        let outs_rev = forward_batch(&ckpt, &ProbeBatch::new(rev).unwrap()).unwrap();
        for (i, o) in outs.iter().enumerate() {
            let single = forward(&ckpt, &probes.sequences()[i]).unwrap();
            assert_eq!(o.logits, single.logits);
            assert_eq!(o.logits, outs_rev[2 - i].logits);
        }
    }

    #[test]
    fn generated_models_are_deterministic_and_valid() {
        let arch = ArchitectureDescriptor::toy(2, 16, 32, 2);
        let a = generate_random_model(&arch, &mut Rng::new(9)).unwrap();
        let b = generate_random_model(&arch, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.tensor("layer.0.norm1.g").unwrap().data, vec![1.0; 16]);
        assert_eq!(a.tensor("layer.1.b1").unwrap().data, vec![0.0; 64]);
    }

    #[test]
    fn independent_seeds_are_nearly_orthogonal() {
        let arch = ArchitectureDescriptor::toy(2, 32, 256, 2);
        for seed in 0..5 {
            let a = generate_random_model(&arch, &mut Rng::new(seed)).unwrap();
            let b = generate_random_model(&arch, &mut Rng::new(seed + 100)).unwrap();
            let c = cosine_similarity(&flatten_parameters(&a), &flatten_parameters(&b)).unwrap();
            assert!(c.abs() < 0.05, "seed {seed}: {c}");
        }
    }

    #[test]
    fn learned_positions_are_used_and_bounded() {
        let mut arch = ArchitectureDescriptor::toy(1, 8, 16, 1);
        arch.positional_kind = PositionalKind::LearnedAbsolute;
        arch.max_positions = 4;
        let ckpt = generate_random_model(&arch, &mut Rng::new(2)).unwrap();
        assert!(forward(&ckpt, &[1, 2, 3, 4]).is_ok());
        assert!(forward(&ckpt, &[1, 2, 3, 4, 5]).is_err());
        let a = forward(&ckpt, &[3, 3]).unwrap();
        assert_ne!(a.logits.row(0), a.logits.row(1));
    }

    #[test]
    fn augmentation_appends_without_touching_existing_rows() {
        let arch = ArchitectureDescriptor::toy(1, 8, 16, 1);
        let ckpt = generate_random_model(&arch, &mut Rng::new(2)).unwrap();
        let aug = augment_vocabulary(&ckpt, 4, &mut Rng::new(3)).unwrap();
        assert_eq!(aug.arch().vocab_size, 20);
        let x0 = ckpt.matrix(EMBED_X).unwrap();
        let x1 = aug.matrix(EMBED_X).unwrap();
        assert_eq!(x0.as_slice(), &x1.as_slice()[..16 * 8]);
        let e0 = ckpt.matrix(SOFTMAX_E).unwrap();
        let e1 = aug.matrix(SOFTMAX_E).unwrap();
        for r in 0..8 {
            assert_eq!(e0.row(r), &e1.row(r)[..16]);
        }
    }
}

//! Function-preserving weight rearrangements ("camouflage" attacks).
//!
//! With row-vector activations (`h · W`), the full composition rewrites:
//!
//! ```text
//! W_Q ← P_Eᵀ W_Q C1        W_K ← P_Eᵀ W_K C1⁻ᵀ
//! W_V ← P_Eᵀ W_V C2        W_O ← C2⁻¹ W_O P_E
//! W_1 ← P_Eᵀ W_1 P_F       b_1 ← b_1 P_F
//! W_2 ← P_Fᵀ W_2 P_E       b_2 ← b_2 P_E
//! X   ← X P_E              E   ← P_Eᵀ E
//! ```
//!
//! Norm gains and biases and learned positions are permuted by `P_E` as
//! well. `C1` and `C2` are block-diagonal with one block per head.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    ArchitectureDescriptor, LayerTensor, ModelCheckpoint, TensorRecord, EMBED_POS, EMBED_X,
    SOFTMAX_E,
};
use crate::error::{Error, Result};
use crate::model::{forward_batch, ProbeBatch};
use crate::numerics::{
    block_diagonal, inverse, sample_invertible, sample_permutation, Matrix, Permutation, Rng,
    DEFAULT_COND_MAX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    LinearQk,
    LinearVo,
    PermuteFfn,
    PermuteEmbed,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::LinearQk,
        AttackKind::LinearVo,
        AttackKind::PermuteFfn,
        AttackKind::PermuteEmbed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::LinearQk => "linear_qk",
            AttackKind::LinearVo => "linear_vo",
            AttackKind::PermuteFfn => "permute_ffn",
            AttackKind::PermuteEmbed => "permute_embed",
        }
    }

    pub fn parse(s: &str) -> Result<AttackKind> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attack kind `{s}`")))
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What is needed to resample an attack: seed, kinds and the target
/// architecture's hash. This is the serialized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackRecipe {
    pub seed: u64,
    pub kinds: BTreeSet<AttackKind>,
    pub arch_hash: String,
}

impl AttackRecipe {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Concrete camouflage matrices. Kinds not requested hold identities.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub recipe: AttackRecipe,
    pub c1: Vec<Matrix>,
    pub c2: Vec<Matrix>,
    pub p_ffn: Vec<Permutation>,
    pub p_e: Permutation,
}

/// Per-head invertible blocks assembled into a `d × d` block-diagonal matrix.
fn sample_headwise(rng: &mut Rng, arch: &ArchitectureDescriptor) -> Result<Matrix> {
    let blocks = (0..arch.num_heads)
        .map(|_| sample_invertible(rng, arch.head_dim(), DEFAULT_COND_MAX))
        .collect::<Result<Vec<_>>>()?;
    Ok(block_diagonal(&blocks))
}

/// Samples an attack of the given kinds. A sub-seed is drawn from `rng` and
/// recorded, so the spec can be replayed from its recipe alone.
pub fn sample_attack(
    arch: &ArchitectureDescriptor,
    kinds: &[AttackKind],
    rng: &mut Rng,
) -> Result<AttackSpec> {
    let recipe = AttackRecipe {
        seed: rng.next_seed(),
        kinds: kinds.iter().copied().collect(),
        arch_hash: arch.hash(),
    };
    AttackSpec::from_recipe(arch, &recipe)
}

impl AttackSpec {
    /// Identity spec: applying it returns a bit-identical checkpoint.
    pub fn identity(arch: &ArchitectureDescriptor) -> Self {
        let n = arch.num_layers;
        AttackSpec {
            recipe: AttackRecipe {
                seed: 0,
                kinds: BTreeSet::new(),
                arch_hash: arch.hash(),
            },
            c1: vec![Matrix::identity(arch.model_dim); n],
            c2: vec![Matrix::identity(arch.model_dim); n],
            p_ffn: vec![Permutation::identity(arch.ffn_dim); n],
            p_e: Permutation::identity(arch.model_dim),
        }
    }

    /// Deterministic resampling. Each component draws from its own stream,
    /// so a kind's matrices do not depend on which other kinds are present.
    pub fn from_recipe(arch: &ArchitectureDescriptor, recipe: &AttackRecipe) -> Result<Self> {
        arch.validate()?;
        if recipe.arch_hash != arch.hash() {
            return Err(Error::InvalidArgument(
                "attack recipe was made for a different architecture".into(),
            ));
        }
        let root = Rng::new(recipe.seed);
        let mut spec = AttackSpec::identity(arch);
        spec.recipe = recipe.clone();
        let has = |k| recipe.kinds.contains(&k);
        if has(AttackKind::PermuteEmbed) {
            spec.p_e = sample_permutation(&mut root.fork(0), arch.model_dim);
        }
        for l in 0..arch.num_layers {
            let base = 1 + 3 * l as u64;
            if has(AttackKind::LinearQk) {
                spec.c1[l] = sample_headwise(&mut root.fork(base), arch)?;
            }
            if has(AttackKind::LinearVo) {
                spec.c2[l] = sample_headwise(&mut root.fork(base + 1), arch)?;
            }
            if has(AttackKind::PermuteFfn) {
                spec.p_ffn[l] = sample_permutation(&mut root.fork(base + 2), arch.ffn_dim);
            }
        }
        Ok(spec)
    }

    pub fn kinds(&self) -> &BTreeSet<AttackKind> {
        &self.recipe.kinds
    }

    /// The spec that undoes this one: inverted matrices and permutations.
    pub fn inverse(&self) -> Result<AttackSpec> {
        Ok(AttackSpec {
            recipe: self.recipe.clone(),
            c1: self.c1.iter().map(inverse).collect::<Result<_>>()?,
            c2: self.c2.iter().map(inverse).collect::<Result<_>>()?,
            p_ffn: self.p_ffn.iter().map(Permutation::inverse).collect(),
            p_e: self.p_e.inverse(),
        })
    }

    fn check(&self, arch: &ArchitectureDescriptor) -> Result<()> {
        let n = arch.num_layers;
        let (d, f) = (arch.model_dim, arch.ffn_dim);
        if self.c1.len() != n || self.c2.len() != n || self.p_ffn.len() != n {
            return Err(Error::dims("attack layer count", n, (self.c1.len(), self.c2.len(), self.p_ffn.len())));
        }
        if self.p_e.len() != d {
            return Err(Error::dims("embedding permutation", d, self.p_e.len()));
        }
        for l in 0..n {
            if self.c1[l].shape() != (d, d) || self.c2[l].shape() != (d, d) {
                return Err(Error::dims("camouflage matrix", (d, d), (self.c1[l].shape(), self.c2[l].shape())));
            }
            if self.p_ffn[l].len() != f {
                return Err(Error::dims("ffn permutation", f, self.p_ffn[l].len()));
            }
        }
        Ok(())
    }
}

fn is_identity(m: &Matrix) -> bool {
    *m == Matrix::identity(m.rows())
}

fn rows_times(m: &Matrix, right: &Matrix) -> Result<Matrix> {
    if is_identity(right) {
        Ok(m.clone())
    } else {
        m.matmul(right)
    }
}

/// Rewrites one layer's tensors; returns `(name, matrix)` pairs.
fn attack_layer(
    ckpt: &ModelCheckpoint,
    spec: &AttackSpec,
    l: usize,
) -> Result<Vec<(String, Matrix)>> {
    use LayerTensor::*;
    let pe = &spec.p_e;
    let pf = &spec.p_ffn[l];
    let get = |t: LayerTensor| ckpt.layer_matrix(l, t);
    let mut out = Vec::new();

    let (c1, c2) = (&spec.c1[l], &spec.c2[l]);
    let wq = rows_times(&pe.transpose_left_multiply(&get(Wq)?), c1)?;
    let c1_inv_t = if is_identity(c1) { c1.clone() } else { inverse(c1)?.transpose() };
    let wk = rows_times(&pe.transpose_left_multiply(&get(Wk)?), &c1_inv_t)?;
    let wv = rows_times(&pe.transpose_left_multiply(&get(Wv)?), c2)?;
    let wo = if is_identity(c2) { get(Wo)? } else { inverse(c2)?.matmul(&get(Wo)?)? };
    let wo = pe.right_multiply(&wo);
    let w1 = pf.right_multiply(&pe.transpose_left_multiply(&get(W1)?));
    let w2 = pe.right_multiply(&pf.transpose_left_multiply(&get(W2)?));
    let vec_row = |t: LayerTensor, p: &Permutation| -> Result<Matrix> {
        let data = &ckpt.tensor(&t.name(l))?.data;
        Matrix::from_vec(1, data.len(), p.apply_vec(data))
    };
    out.push((Wq.name(l), wq));
    out.push((Wk.name(l), wk));
    out.push((Wv.name(l), wv));
    out.push((Wo.name(l), wo));
    out.push((W1.name(l), w1));
    out.push((W2.name(l), w2));
    out.push((B1.name(l), vec_row(B1, pf)?));
    out.push((B2.name(l), vec_row(B2, pe)?));
    for t in [Norm1Gain, Norm2Gain, Norm1Bias, Norm2Bias] {
        if ckpt.tensor(&t.name(l)).is_ok() {
            out.push((t.name(l), vec_row(t, pe)?));
        }
    }
    Ok(out)
}

/// Applies every substitution of `spec` to a copy of `ckpt`.
pub fn apply_attack(ckpt: &ModelCheckpoint, spec: &AttackSpec) -> Result<ModelCheckpoint> {
    let arch = *ckpt.arch();
    spec.check(&arch)?;
    let layers = (0..arch.num_layers)
        .into_par_iter()
        .map(|l| attack_layer(ckpt, spec, l))
        .collect::<Result<Vec<_>>>()?;
    let mut replaced = std::collections::BTreeMap::new();
    for (name, m) in layers.into_iter().flatten() {
        replaced.insert(name, m);
    }
    let pe = &spec.p_e;
    replaced.insert(EMBED_X.into(), pe.right_multiply(&ckpt.matrix(EMBED_X)?));
    if let Ok(pos) = ckpt.matrix(EMBED_POS) {
        replaced.insert(EMBED_POS.into(), pe.right_multiply(&pos));
    }
    if let Ok(e) = ckpt.matrix(SOFTMAX_E) {
        replaced.insert(SOFTMAX_E.into(), pe.transpose_left_multiply(&e));
    }
    let tensors = ckpt.tensors().map(|t| match replaced.remove(&t.name) {
        Some(m) => TensorRecord::new(t.name.clone(), t.shape.clone(), m.into_vec()),
        None => t.clone(),
    });
    let mut out = ckpt.rebuild(arch, tensors)?;
    if !spec.kinds().is_empty() {
        let kinds: Vec<&str> = spec.kinds().iter().map(|k| k.as_str()).collect();
        out.metadata_mut()
            .insert("attack".into(), format!("seed={} kinds={}", spec.recipe.seed, kinds.join(",")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub max_abs_logit_diff: f64,
    pub tolerance: f64,
    pub probes: usize,
    pub passed: bool,
}

/// Runs both models on every probe and compares logits.
pub fn verify_output_equivalence(
    a: &ModelCheckpoint,
    b: &ModelCheckpoint,
    probes: &ProbeBatch,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    if a.arch() != b.arch() {
        return Err(Error::Incomparable("architectures differ".into()));
    }
    let la = forward_batch(a, probes)?;
    let lb = forward_batch(b, probes)?;
    let max = la
        .iter()
        .zip(&lb)
        .map(|(x, y)| x.logits.max_abs_diff(&y.logits))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    Ok(EquivalenceReport {
        max_abs_logit_diff: max,
        tolerance,
        probes: probes.sequences().len(),
        passed: max <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{flatten_parameters, NormKind, PositionalKind};
    use crate::model::generate_random_model;

    fn model(seed: u64) -> ModelCheckpoint {
        let mut arch = ArchitectureDescriptor::toy(2, 16, 40, 4);
        arch.norm_kind = NormKind::LayerNorm;
        arch.positional_kind = PositionalKind::LearnedAbsolute;
        arch.max_positions = 8;
        generate_random_model(&arch, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn empty_kinds_give_identity() {
        let m = model(1);
        let spec = sample_attack(m.arch(), &[], &mut Rng::new(2)).unwrap();
        let mut id = AttackSpec::identity(m.arch());
        id.recipe.seed = spec.recipe.seed;
        assert_eq!(spec, id);
        let out = apply_attack(&m, &spec).unwrap();
        assert_eq!(flatten_parameters(&out), flatten_parameters(&m));
        assert_eq!(out.to_bytes().unwrap(), m.to_bytes().unwrap());
    }

    #[test]
    fn single_kind_leaves_rest_identity() {
        let m = model(1);
        let spec = sample_attack(m.arch(), &[AttackKind::PermuteEmbed], &mut Rng::new(2)).unwrap();
        assert!(!spec.p_e.is_identity());
        assert!(spec.c1.iter().all(is_identity));
        assert!(spec.c2.iter().all(is_identity));
        assert!(spec.p_ffn.iter().all(Permutation::is_identity));
    }

    #[test]
    fn sampling_is_deterministic_and_replayable() {
        let m = model(1);
        let a = sample_attack(m.arch(), &AttackKind::ALL, &mut Rng::new(9)).unwrap();
        let b = sample_attack(m.arch(), &AttackKind::ALL, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let recipe = AttackRecipe::from_json(&a.recipe.to_json()).unwrap();
        assert_eq!(AttackSpec::from_recipe(m.arch(), &recipe).unwrap(), a);
        let other = ArchitectureDescriptor::toy(2, 16, 41, 4);
        assert!(AttackSpec::from_recipe(&other, &recipe).is_err());
    }

    #[test]
    fn camouflage_blocks_respect_heads() {
        let m = model(1);
        let spec = sample_attack(m.arch(), &[AttackKind::LinearQk], &mut Rng::new(3)).unwrap();
        let dh = m.arch().head_dim();
        let c = &spec.c1[0];
        for r in 0..16 {
            for col in 0..16 {
                if r / dh != col / dh {
                    assert_eq!(c.get(r, col), 0.0);
                }
            }
        }
    }

    #[test]
    fn every_kind_preserves_outputs() {
        let m = model(4);
        let probes = ProbeBatch::random(&mut Rng::new(5), 3, 8, 40).unwrap();
        for kinds in AttackKind::ALL.iter().map(|k| vec![*k]).chain([AttackKind::ALL.to_vec()]) {
            let spec = sample_attack(m.arch(), &kinds, &mut Rng::new(6)).unwrap();
            let attacked = apply_attack(&m, &spec).unwrap();
            let r = verify_output_equivalence(&m, &attacked, &probes, 1e-4).unwrap();
            assert!(r.passed, "{kinds:?}: {r:?}");
        }
    }

    #[test]
    fn permutation_spec_inverts_exactly() {
        let m = model(4);
        let spec = sample_attack(
            m.arch(),
            &[AttackKind::PermuteEmbed, AttackKind::PermuteFfn],
            &mut Rng::new(6),
        )
        .unwrap();
        let there = apply_attack(&m, &spec).unwrap();
        assert_ne!(flatten_parameters(&there), flatten_parameters(&m));
        let back = apply_attack(&there, &spec.inverse().unwrap()).unwrap();
        assert_eq!(flatten_parameters(&back), flatten_parameters(&m));
    }

    #[test]
    fn unrelated_models_are_not_equivalent() {
        let probes = ProbeBatch::random(&mut Rng::new(5), 2, 6, 40).unwrap();
        let r = verify_output_equivalence(&model(1), &model(2), &probes, 1e-4).unwrap();
        assert!(!r.passed);
        let same = verify_output_equivalence(&model(1), &model(1), &probes, 1e-4).unwrap();
        assert_eq!(same.max_abs_logit_diff, 0.0);
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in AttackKind::ALL {
            assert_eq!(AttackKind::parse(k.as_str()).unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!(AttackKind::parse("rotate").is_err());
    }
}

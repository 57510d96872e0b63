//! Checkpoint to fingerprint image, and the same-base verdict.

use serde::Serialize;

use crate::checkpoint::ModelCheckpoint;
use crate::error::Result;
use crate::fpm::file::EncoderFile;
use crate::fpm::{encode, FingerprintVector};
use crate::invariants::{corpus_mismatch, ics, stack_invariants, InvariantTensor, DEFAULT_LAYER_SPAN};
use crate::render::{CosineRenderer, FingerprintImage, Renderer, DEFAULT_SIZE, RENDERER_VERSION};
use crate::vocab::{count_frequencies, select_anchor_tokens, AnchorSet, Corpus};

pub const DEFAULT_THRESHOLD: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub layer_span: usize,
    pub image_size: usize,
}

impl PipelineConfig {
    /// Settings matching a trained encoder's input geometry.
    pub fn for_encoder(encoder: &EncoderFile) -> Self {
        PipelineConfig {
            k: encoder.encoder.input_size,
            layer_span: encoder.encoder.in_channels() / crate::invariants::TERMS_PER_LAYER,
            image_size: DEFAULT_SIZE,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: crate::vocab::DEFAULT_K,
            layer_span: DEFAULT_LAYER_SPAN,
            image_size: DEFAULT_SIZE,
        }
    }
}

/// Hashes needed to reproduce a fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FingerprintMetadata {
    pub checkpoint_hash: String,
    pub architecture_hash: String,
    pub corpus_hash: String,
    pub anchor_hash: String,
    pub invariants_hash: String,
    pub encoder_hash: String,
    pub renderer_version: String,
    pub k: usize,
    pub layer_span: Vec<usize>,
    pub image_size: usize,
}

#[derive(Debug, Clone)]
pub struct FingerprintArtifacts {
    pub anchors: AnchorSet,
    pub invariants: InvariantTensor,
    pub fingerprint: FingerprintVector,
    pub image: FingerprintImage,
    pub metadata: FingerprintMetadata,
}

/// Anchors from the corpus, stacked invariants of the last layers, encoder,
/// renderer. Errors name the stage they came from.
pub fn fingerprint_checkpoint(
    ckpt: &ModelCheckpoint,
    corpus: &Corpus,
    encoder: &EncoderFile,
    cfg: &PipelineConfig,
) -> Result<FingerprintArtifacts> {
    let anchors = count_frequencies(&corpus.tokens, corpus.vocab_size)
        .and_then(|stats| select_anchor_tokens(&stats, cfg.k))
        .map_err(|e| e.at_stage("select anchors"))?;
    let invariants = stack_invariants(ckpt, &anchors, cfg.layer_span).map_err(|e| e.at_stage("invariant terms"))?;
    let encoder_hash = encoder.hash().map_err(|e| e.at_stage("encoder"))?;
    let fingerprint = encode(encoder, &encoder_hash, &invariants).map_err(|e| e.at_stage("encoder"))?;
    let image = CosineRenderer::new(&encoder_hash)
        .render(&fingerprint.v, cfg.image_size)
        .map_err(|e| e.at_stage("render"))?;
    let metadata = FingerprintMetadata {
        checkpoint_hash: ckpt.content_hash()?,
        architecture_hash: ckpt.arch().hash(),
        corpus_hash: corpus.content_hash(),
        anchor_hash: anchors.hash(),
        invariants_hash: invariants.content_hash()?,
        encoder_hash,
        renderer_version: RENDERER_VERSION.into(),
        k: cfg.k,
        layer_span: invariants.layer_span().to_vec(),
        image_size: cfg.image_size,
    };
    Ok(FingerprintArtifacts {
        anchors,
        invariants,
        fingerprint,
        image,
        metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub ics: f64,
    pub threshold: f64,
    pub same_base: bool,
    /// The tensors were built from different corpora; anchors still match.
    pub corpus_mismatch: bool,
}

pub fn compare_invariants(a: &InvariantTensor, b: &InvariantTensor, threshold: f64) -> Result<Verdict> {
    let score = ics(a, b)?;
    Ok(Verdict {
        ics: score,
        threshold,
        same_base: score >= threshold,
        corpus_mismatch: corpus_mismatch(a, b),
    })
}

//! Fingerprinting model: convolutional encoder, discriminator and training.

pub mod calibration;
pub mod conv;
pub mod discriminator;
pub mod encoder;
pub mod file;
pub mod gaussian;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariants::InvariantTensor;
use file::EncoderFile;

/// Scales each `K × K` channel to unit root-mean-square; all-zero channels
/// stay zero. Applied to every encoder input, synthetic or real.
pub fn normalize_channels<T: Copy + Into<f64>>(data: &[T], channels: usize) -> Vec<f32> {
    assert!(channels > 0 && data.len() % channels == 0, "channel split");
    let per = data.len() / channels;
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks_exact(per) {
        let ms = chunk.iter().map(|&x| x.into().powi(2)).sum::<f64>() / per as f64;
        let scale = if ms > 0.0 { 1.0 / ms.sqrt() } else { 0.0 };
        out.extend(chunk.iter().map(|&x| (x.into() * scale) as f32));
    }
    out
}

/// A 512-dimensional fingerprint and the encoder that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintVector {
    pub encoder_hash: String,
    pub v: Vec<f32>,
}

/// Runs the calibrated encoder on a stacked invariant tensor.
pub fn encode(file: &EncoderFile, encoder_hash: &str, tensor: &InvariantTensor) -> Result<FingerprintVector> {
    let encoder = &file.encoder;
    if tensor.k() != encoder.input_size || tensor.channels() != encoder.in_channels() {
        return Err(Error::Incomparable(format!(
            "encoder expects {} channels of side {}, tensor has {} of side {}",
            encoder.in_channels(),
            encoder.input_size,
            tensor.channels(),
            tensor.k()
        )));
    }
    let x = normalize_channels(tensor.as_slice(), tensor.channels());
    Ok(FingerprintVector {
        encoder_hash: encoder_hash.to_owned(),
        v: file.forward(&x)?,
    })
}

//! Encoder parameter files (`HRFE`): the shared container with a JSON
//! header echoing the training configuration and one `f32` blob per tensor,
//! the output calibration last.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::calibration::OutputCalibration;
use super::conv::ConvGeometry;
use super::encoder::{Encoder, FINGERPRINT_DIM};
use super::train::TrainConfig;
use crate::container;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HRFE";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    in_channels: usize,
    input_size: usize,
    geometry: ConvGeometry,
    dtype: String,
    config: Option<TrainConfig>,
    tensors: Vec<TensorEntry>,
}

const CALIBRATION_MEAN: &str = "calibration.mean";
const CALIBRATION_INV_STD: &str = "calibration.inv_std";

/// A trained encoder, its output calibration and the configuration that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFile {
    pub encoder: Encoder<f32>,
    pub calibration: OutputCalibration,
    pub config: Option<TrainConfig>,
}

impl EncoderFile {
    pub fn new(encoder: Encoder<f32>, calibration: OutputCalibration, config: Option<TrainConfig>) -> Self {
        EncoderFile {
            encoder,
            calibration,
            config,
        }
    }

    /// An encoder with the identity calibration.
    pub fn uncalibrated(encoder: Encoder<f32>, config: Option<TrainConfig>) -> Self {
        Self::new(encoder, OutputCalibration::identity(FINGERPRINT_DIM), config)
    }

    /// Encoder output followed by the calibration, for one input.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        let mut v = self.encoder.forward(x)?;
        self.calibration.apply(&mut v);
        Ok(v)
    }

    fn tensors(&self) -> Vec<(String, &[f32])> {
        let mut t = self.encoder.tensors();
        t.push((CALIBRATION_MEAN.into(), &self.calibration.mean));
        t.push((CALIBRATION_INV_STD.into(), &self.calibration.inv_std));
        t
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let blobs: Vec<Vec<u8>> = tensors.iter().map(|(_, t)| container::f32s_to_le(t)).collect();
        let offsets = container::blob_offsets(blobs.iter().map(Vec::len));
        let header = Header {
            format: "HRFE".into(),
            in_channels: self.encoder.in_channels(),
            input_size: self.encoder.input_size,
            geometry: self.encoder.geometry(),
            dtype: "f32le".into(),
            config: self.config,
            tensors: tensors
                .iter()
                .zip(&offsets)
                .map(|((name, t), &offset)| TensorEntry {
                    name: name.clone(),
                    len: t.len(),
                    offset,
                    nbytes: 4 * t.len() as u64,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let refs: Vec<&[u8]> = blobs.iter().map(Vec::as_slice).collect();
        Ok(container::encode(MAGIC, FORMAT_VERSION, &header, &refs))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let framed = container::decode(bytes, MAGIC, &[FORMAT_VERSION])?;
        let h: Header = serde_json::from_slice(framed.header)?;
        if h.dtype != "f32le" {
            return Err(Error::MalformedHeader(format!("unknown dtype `{}`", h.dtype)));
        }
        let mut encoder: Encoder<f32> = Encoder::with_geometry(h.in_channels, h.input_size, h.geometry)?;
        let mut calibration = OutputCalibration::identity(FINGERPRINT_DIM);
        let expected: Vec<(String, usize)> = EncoderFile::new(encoder.clone(), calibration.clone(), None)
            .tensors()
            .iter()
            .map(|(n, t)| (n.clone(), t.len()))
            .collect();
        let mut dsts = encoder.tensors_mut();
        dsts.push(&mut calibration.mean[..]);
        dsts.push(&mut calibration.inv_std[..]);
        if h.tensors.len() != expected.len() {
            return Err(Error::MalformedHeader(format!(
                "{} tensors listed, encoder has {}",
                h.tensors.len(),
                expected.len()
            )));
        }
        for ((entry, (name, len)), dst) in h.tensors.iter().zip(&expected).zip(dsts) {
            if &entry.name != name {
                return Err(Error::UnexpectedTensor(entry.name.clone()));
            }
            if entry.len != *len || entry.nbytes != 4 * *len as u64 {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: vec![*len],
                    actual: vec![entry.len],
                });
            }
            let blob = framed.blob(name, entry.offset, entry.nbytes)?;
            dst.copy_from_slice(&container::le_to_f32s(blob));
        }
        if encoder.tensors().iter().any(|(_, t)| t.iter().any(|x| !x.is_finite())) || !calibration.is_finite() {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(EncoderFile::new(encoder, calibration, h.config))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// SHA-256 of the serialized file; identifies the encoder in fingerprints.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> EncoderFile {
        let mut rng = Rng::new(4);
        let enc = Encoder::init(6, 16, 0.02, &mut rng).unwrap();
        let cal = OutputCalibration::fit_synthetic(&enc, 10, &mut rng).unwrap();
        EncoderFile::new(enc, cal, Some(TrainConfig::default()))
    }

    #[test]
    fn roundtrip_is_exact() {
        let f = sample();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"HRFE");
        let back = EncoderFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.hash().unwrap(), f.hash().unwrap());
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(EncoderFile::from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(EncoderFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

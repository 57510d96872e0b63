//! Per-coordinate standardization of encoder outputs, fitted once on
//! synthetic anchors after training and stored with the encoder.

use super::encoder::{Encoder, FINGERPRINT_DIM};
use super::normalize_channels;
use super::synth::synth_anchor;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Anchors used to fit a calibration.
pub const CALIBRATION_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputCalibration {
    pub mean: Vec<f32>,
    /// Reciprocal standard deviation; 1 for constant coordinates.
    pub inv_std: Vec<f32>,
}

impl OutputCalibration {
    pub fn identity(dim: usize) -> Self {
        OutputCalibration {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and standard deviation of each coordinate over `outputs`.
    pub fn fit<V: AsRef<[f32]>>(outputs: &[V]) -> Result<Self> {
        if outputs.len() < 2 {
            return Err(Error::TooFewSamples {
                got: outputs.len(),
                min: 2,
            });
        }
        let dim = outputs[0].as_ref().len();
        if let Some(v) = outputs.iter().find(|v| v.as_ref().len() != dim) {
            return Err(Error::LengthMismatch {
                left: dim,
                right: v.as_ref().len(),
            });
        }
        let n = outputs.len() as f64;
        let mut mean = vec![0.0f64; dim];
        for v in outputs {
            for (m, &x) in mean.iter_mut().zip(v.as_ref()) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; dim];
        for v in outputs {
            for ((s, &x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
                *s += (x as f64 - m).powi(2);
            }
        }
        Ok(OutputCalibration {
            mean: mean.iter().map(|&m| m as f32).collect(),
            inv_std: var
                .iter()
                .map(|&s| {
                    let sd = (s / n).sqrt();
                    if sd > 0.0 {
                        (1.0 / sd) as f32
                    } else {
                        1.0
                    }
                })
                .collect(),
        })
    }

    /// Fits on the outputs for `samples` synthetic anchors.
    pub fn fit_synthetic(encoder: &Encoder<f32>, samples: usize, rng: &mut Rng) -> Result<Self> {
        const CHUNK: usize = 25;
        let (k, c) = (encoder.input_size, encoder.in_channels());
        let mut outputs = Vec::with_capacity(samples);
        while outputs.len() < samples {
            let n = CHUNK.min(samples - outputs.len());
            let x: Vec<f32> = (0..n).flat_map(|_| normalize_channels(&synth_anchor(rng, k, c), c)).collect();
            let (v, _) = encoder.forward_batch(&x, n)?;
            outputs.extend(v.chunks_exact(FINGERPRINT_DIM).map(<[f32]>::to_vec));
        }
        Self::fit(&outputs)
    }

    pub fn apply(&self, v: &mut [f32]) {
        for ((x, m), s) in v.iter_mut().zip(&self.mean).zip(&self.inv_std) {
            *x = (*x - m) * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.inv_std).all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_outputs_have_zero_mean_and_unit_variance() {
        let mut rng = Rng::new(3);
        let vs: Vec<Vec<f32>> = (0..400)
            .map(|_| (0..4).map(|j| (j as f64 * 5.0 + (1.0 + j as f64) * rng.normal()) as f32).collect())
            .collect();
        let cal = OutputCalibration::fit(&vs).unwrap();
        let out: Vec<Vec<f32>> = vs
            .iter()
            .map(|v| {
                let mut v = v.clone();
                cal.apply(&mut v);
                v
            })
            .collect();
        for j in 0..4 {
            let m = out.iter().map(|v| v[j] as f64).sum::<f64>() / 400.0;
            let var = out.iter().map(|v| (v[j] as f64 - m).powi(2)).sum::<f64>() / 400.0;
            assert!(m.abs() < 1e-5 && (var - 1.0).abs() < 1e-4, "{m} {var}");
        }
    }

    #[test]
    fn constant_coordinate_is_only_centered() {
        let vs = vec![vec![2.0f32, 1.0], vec![2.0, 3.0]];
        let cal = OutputCalibration::fit(&vs).unwrap();
        assert_eq!(cal.inv_std[0], 1.0);
        let mut v = vec![2.0, 3.0];
        cal.apply(&mut v);
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn identity_leaves_vectors_alone() {
        let mut v = vec![0.5f32, -2.0];
        OutputCalibration::identity(2).apply(&mut v);
        assert_eq!(v, vec![0.5, -2.0]);
    }
}

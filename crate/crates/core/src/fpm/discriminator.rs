use super::encoder::{leaky, FINGERPRINT_DIM};
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const HIDDEN: [usize; 3] = [256, 128, 128];
pub const DISCRIMINATOR_LEAK: f64 = 0.2;

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias);
        }
        T::gemm(batch, self.inputs, self.outputs, x, false, &self.weight, true, &mut y, true);
        y
    }

    fn backward(&self, x: &[T], dy: &[T], batch: usize, grad: &mut Linear<T>) -> Vec<T> {
        T::gemm(self.outputs, batch, self.inputs, dy, true, x, false, &mut grad.weight, true);
        for row in dy.chunks_exact(self.outputs) {
            for (g, &d) in grad.bias.iter_mut().zip(row) {
                *g = *g + d;
            }
        }
        let mut dx = vec![T::zero(); batch * self.inputs];
        T::gemm(batch, self.outputs, self.inputs, dy, false, &self.weight, false, &mut dx, false);
        dx
    }
}

/// `512 → 256 → 128 → 128` with leaky rectifiers, then a scalar logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub layers: Vec<Linear<T>>,
}

pub struct DiscriminatorCache<T> {
    batch: usize,
    pub(crate) inputs: Vec<Vec<T>>,
}

impl<T: Real> Discriminator<T> {
    pub fn zeros() -> Self {
        let mut inputs = FINGERPRINT_DIM;
        let mut layers = Vec::new();
        for &h in HIDDEN.iter().chain(&[1]) {
            layers.push(Linear::zeros(inputs, h));
            inputs = h;
        }
        Discriminator { layers }
    }

    /// Weights `N(0, std²)`, biases zero.
    pub fn init(std: f64, rng: &mut Rng) -> Self {
        let mut d = Self::zeros();
        for l in &mut d.layers {
            for w in &mut l.weight {
                *w = T::from_f64(std * rng.normal());
            }
        }
        d
    }

    /// Logits for a `batch × 512` input.
    pub fn logits(&self, v: &[T], batch: usize) -> Result<(Vec<T>, DiscriminatorCache<T>)> {
        if v.len() != batch * FINGERPRINT_DIM {
            return Err(Error::dims("discriminator input", batch * FINGERPRINT_DIM, v.len()));
        }
        let slope = T::from_f64(DISCRIMINATOR_LEAK);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = v.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(&h, batch);
            if i + 1 < self.layers.len() {
                for x in &mut y {
                    *x = leaky(*x, slope);
                }
            }
            inputs.push(std::mem::replace(&mut h, y));
        }
        Ok((h, DiscriminatorCache { batch, inputs }))
    }

    /// Probability that a single vector is a real Gaussian sample, kept
    /// strictly inside `(0, 1)` even when the logit saturates.
    pub fn probability(&self, v: &[T]) -> Result<f64> {
        if v.len() != FINGERPRINT_DIM {
            return Err(Error::dims("discriminator input", FINGERPRINT_DIM, v.len()));
        }
        let (z, _) = self.logits(v, 1)?;
        Ok(sigmoid(z[0].as_f64()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    /// Accumulates parameter gradients given `∂L/∂logit`; returns `∂L/∂v`.
    pub fn backward(&self, cache: &DiscriminatorCache<T>, d_logits: &[T], grad: &mut Discriminator<T>) -> Vec<T> {
        let slope = T::from_f64(DISCRIMINATOR_LEAK);
        let mut d = d_logits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let mut dx = self.layers[i].backward(x, &d, cache.batch, &mut grad.layers[i]);
            if i > 0 {
                for (g, &a) in dx.iter_mut().zip(x) {
                    if a <= T::zero() {
                        *g = *g * slope;
                    }
                }
            }
            d = dx;
        }
        d
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros()
    }

    pub fn tensors(&self) -> Vec<(String, &[T])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("linear.{i}.weight"), &l.weight[..]), (format!("linear.{i}.bias"), &l.bias[..])])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight[..], &mut l.bias[..]])
            .collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᶻ)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

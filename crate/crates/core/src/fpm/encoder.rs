use super::conv::{Conv2d, ConvCache, ConvGeometry, Layout};
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use serde::{Deserialize, Serialize};

/// Output channels of the four convolution layers.
pub const CHANNELS: [usize; 4] = [8, 64, 256, 512];
pub const FINGERPRINT_DIM: usize = 512;
pub const ENCODER_LEAK: f64 = 0.01;

/// Weight and bias initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// `N(0, std²)` for every layer.
    Fixed { std: f64 },
    /// `N(0, gain²/fan_in)`, fan-in being the patch length of each layer,
    /// and every bias set to `bias`.
    FanIn { gain: f64, bias: f64 },
}

impl InitScheme {
    pub fn std(&self, fan_in: usize) -> f64 {
        match *self {
            InitScheme::Fixed { std } => std,
            InitScheme::FanIn { gain, .. } => gain / (fan_in as f64).sqrt(),
        }
    }

    pub fn bias(&self) -> f64 {
        match *self {
            InitScheme::Fixed { .. } => 0.0,
            InitScheme::FanIn { bias, .. } => bias,
        }
    }

    pub fn is_valid(&self) -> bool {
        let x = match *self {
            InitScheme::Fixed { std } => std,
            InitScheme::FanIn { gain, .. } => gain,
        };
        x.is_finite() && x > 0.0 && self.bias().is_finite()
    }
}

/// Four strided convolutions, leaky rectifier after the first three, a mean
/// over all spatial positions, then rescaling to norm `√512` (unit RMS).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub input_size: usize,
    pub layers: Vec<Conv2d<T>>,
}

pub struct EncoderCache<T> {
    pub(crate) convs: Vec<ConvCache<T>>,
    /// Post-activation outputs of the first three layers.
    pub(crate) activations: Vec<Vec<T>>,
    final_spatial: usize,
    batch: usize,
    /// Euclidean norm of each pooled row before rescaling.
    pooled_norms: Vec<T>,
    output: Vec<T>,
}

pub(crate) fn leaky<T: Real>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

impl<T: Real> Encoder<T> {
    pub fn zeros(in_channels: usize, input_size: usize) -> Result<Self> {
        Self::with_geometry(in_channels, input_size, ConvGeometry::for_input_size(input_size))
    }

    pub fn with_geometry(in_channels: usize, input_size: usize, geometry: ConvGeometry) -> Result<Self> {
        if in_channels == 0 || input_size == 0 {
            return Err(Error::InvalidArgument("encoder needs positive channels and size".into()));
        }
        shape_trace(input_size, geometry)?;
        let mut inc = in_channels;
        let layers = CHANNELS
            .iter()
            .map(|&out| {
                let l = Conv2d::zeros(inc, out, geometry);
                inc = out;
                l
            })
            .collect();
        Ok(Encoder { input_size, layers })
    }

    /// Weights `N(0, std²)` drawn layer by layer, biases zero.
    pub fn init(in_channels: usize, input_size: usize, std: f64, rng: &mut Rng) -> Result<Self> {
        Self::init_with(in_channels, input_size, InitScheme::Fixed { std }, rng)
    }

    pub fn init_with(in_channels: usize, input_size: usize, scheme: InitScheme, rng: &mut Rng) -> Result<Self> {
        let mut enc = Self::zeros(in_channels, input_size)?;
        for l in &mut enc.layers {
            let std = scheme.std(l.patch_len());
            for w in &mut l.weight {
                *w = T::from_f64(std * rng.normal());
            }
            l.bias.fill(T::from_f64(scheme.bias()));
        }
        Ok(enc)
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.layers[0].geometry
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        let want = batch * self.in_channels() * self.input_size * self.input_size;
        if x.len() != want || batch == 0 {
            return Err(Error::dims("encoder input", want, x.len()));
        }
        Ok(())
    }

    /// One `C × K × K` input to one fingerprint vector.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_batch(x, 1)?.0)
    }

    /// `batch` inputs (sample-major) to a `batch × 512` row-major output.
    pub fn forward_batch(&self, x: &[T], batch: usize) -> Result<(Vec<T>, EncoderCache<T>)> {
        self.check_input(x, batch)?;
        let slope = T::from_f64(ENCODER_LEAK);
        let mut n = self.input_size;
        let mut convs = Vec::with_capacity(4);
        let mut activations = Vec::with_capacity(3);
        let mut h: Vec<T> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (input, layout) = if i == 0 { (x, Layout::SampleMajor) } else { (&h[..], Layout::ChannelMajor) };
            let (mut out, cache) = layer.forward(input, batch, n, layout);
            n = cache.out_size;
            convs.push(cache);
            if i < 3 {
                for v in &mut out {
                    *v = leaky(*v, slope);
                }
                activations.push(out.clone());
            }
            h = out;
        }
        let s = n * n;
        let inv = T::from_f64(1.0 / s as f64);
        let mut v = vec![T::zero(); batch * FINGERPRINT_DIM];
        // h is channel-major: (512, batch, s).
        for (o, chunk) in h.chunks_exact(batch * s).enumerate() {
            for b in 0..batch {
                v[b * FINGERPRINT_DIM + o] = chunk[b * s..(b + 1) * s].iter().copied().sum::<T>() * inv;
            }
        }
        let scale = T::from_f64((FINGERPRINT_DIM as f64).sqrt());
        let mut pooled_norms = Vec::with_capacity(batch);
        for row in v.chunks_exact_mut(FINGERPRINT_DIM) {
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if n > T::zero() {
                let f = scale / n;
                row.iter_mut().for_each(|x| *x = *x * f);
            }
            pooled_norms.push(n);
        }
        let cache = EncoderCache {
            convs,
            activations,
            final_spatial: s,
            batch,
            pooled_norms,
            output: v.clone(),
        };
        Ok((v, cache))
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂v` (`batch × 512`).
    pub fn backward(&self, cache: &EncoderCache<T>, dv: &[T], grad: &mut Encoder<T>) {
        let batch = cache.batch;
        assert_eq!(dv.len(), batch * FINGERPRINT_DIM, "fingerprint gradient size");
        let s = cache.final_spatial;
        let inv = T::from_f64(1.0 / s as f64);
        let dim = T::from_f64(FINGERPRINT_DIM as f64);
        let scale = dim.sqrt();
        // Through the rescaling: du = (√D/‖u‖)·(dv − v·(v·dv)/D).
        let mut du = vec![T::zero(); dv.len()];
        for b in 0..batch {
            let n = cache.pooled_norms[b];
            if n == T::zero() {
                continue;
            }
            let r = b * FINGERPRINT_DIM..(b + 1) * FINGERPRINT_DIM;
            let (g, v) = (&dv[r.clone()], &cache.output[r.clone()]);
            let dot = g.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>() / dim;
            for ((d, &gi), &vi) in du[r].iter_mut().zip(g).zip(v) {
                *d = scale / n * (gi - vi * dot);
            }
        }
        let mut d = vec![T::zero(); FINGERPRINT_DIM * batch * s];
        for o in 0..FINGERPRINT_DIM {
            for b in 0..batch {
                let g = du[b * FINGERPRINT_DIM + o] * inv;
                d[(o * batch + b) * s..(o * batch + b + 1) * s].fill(g);
            }
        }
        let slope = T::from_f64(ENCODER_LEAK);
        for i in (0..4).rev() {
            if i < 3 {
                for (g, &a) in d.iter_mut().zip(&cache.activations[i]) {
                    if a <= T::zero() {
                        *g = *g * slope;
                    }
                }
            }
            match self.layers[i].backward(&cache.convs[i], &d, &mut grad.layers[i], i > 0) {
                Some(next) => d = next,
                None => break,
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for l in &mut z.layers {
            l.weight.fill(T::zero());
            l.bias.fill(T::zero());
        }
        z
    }

    /// Parameter tensors in canonical order with their names.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("conv.{i}.weight"), &l.weight[..]), (format!("conv.{i}.bias"), &l.bias[..])])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight[..], &mut l.bias[..]])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            input_size: self.input_size,
            layers: self
                .layers
                .iter()
                .map(|l| Conv2d {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    geometry: l.geometry,
                    weight: l.weight.iter().map(|w| U::from_f64(w.as_f64())).collect(),
                    bias: l.bias.iter().map(|w| U::from_f64(w.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Spatial side length after each of the four layers for a `k × k` input.
pub fn shape_trace(k: usize, geometry: ConvGeometry) -> Result<[usize; 4]> {
    let mut sizes = [0; 4];
    let mut n = k;
    for s in &mut sizes {
        n = geometry.output_size(n).ok_or_else(|| {
            Error::InvalidArgument(format!("input side {k} too small for kernel {}", geometry.kernel))
        })?;
        *s = n;
    }
    Ok(sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_and_biases_give_zero_vector() {
        let enc: Encoder<f32> = Encoder::init(6, 16, 0.02, &mut Rng::new(1)).unwrap();
        let v = enc.forward(&vec![0.0; 6 * 16 * 16]).unwrap();
        assert_eq!(v.len(), 512);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_sized() {
        let enc: Encoder<f32> = Encoder::init(3, 8, 0.1, &mut Rng::new(1)).unwrap();
        let x: Vec<f32> = (0..3 * 64).map(|i| (i as f32).sin()).collect();
        let a = enc.forward(&x).unwrap();
        assert_eq!(a, enc.forward(&x).unwrap());
        assert_eq!(a.len(), FINGERPRINT_DIM);
        assert!(enc.forward(&x[1..]).is_err());
        let y: Vec<f32> = x.iter().map(|v| v * 0.5 - 0.1).collect();
        let (both, _) = enc.forward_batch(&[x.clone(), y.clone()].concat(), 2).unwrap();
        let single_y = enc.forward(&y).unwrap();
        for (p, q) in both[512..].iter().zip(&single_y) {
            assert!((p - q).abs() <= 1e-6 * q.abs().max(1.0));
        }
    }

    #[test]
    fn trace_matches_forward_sizes() {
        for k in [8usize, 16, 64] {
            let g = ConvGeometry::for_input_size(k);
            let trace = shape_trace(k, g).unwrap();
            let enc: Encoder<f32> = Encoder::zeros(1, k).unwrap();
            let (_, cache) = enc.forward_batch(&vec![0.0; k * k], 1).unwrap();
            let got: Vec<usize> = cache.convs.iter().map(|c| c.out_size).collect();
            assert_eq!(got, trace.to_vec());
        }
        assert_eq!(shape_trace(64, ConvGeometry::for_input_size(64)).unwrap(), [32, 16, 8, 4]);
        assert_eq!(shape_trace(8, ConvGeometry::for_input_size(8)).unwrap(), [4, 2, 1, 1]);
    }
}

//! Synthetic training tensors built from random matrix products.
//!
//! Each anchor channel is `P₁ P₂ P₃ P₁ᵀ` with standard-normal `K × K`
//! factors, mirroring the `X̂ W W' X̂ᵀ` shape of real invariant terms. The
//! positive perturbs every factor by `N(0, α²)` noise; the negative uses
//! fresh factors.

use super::scalar::Real;
use crate::numerics::Rng;

/// Three `K × K` factors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub p3: Vec<f64>,
}

impl Factors {
    pub fn sample(rng: &mut Rng, k: usize) -> Self {
        let mut draw = || (0..k * k).map(|_| rng.normal()).collect::<Vec<f64>>();
        Factors {
            p1: draw(),
            p2: draw(),
            p3: draw(),
        }
    }

    fn perturbed(&self, rng: &mut Rng, alpha: f64) -> Self {
        let mut add = |p: &[f64]| p.iter().map(|&x| x + alpha * rng.normal()).collect::<Vec<f64>>();
        Factors {
            p1: add(&self.p1),
            p2: add(&self.p2),
            p3: add(&self.p3),
        }
    }

    /// `P₁ P₂ P₃ P₁ᵀ`.
    pub fn product(&self, k: usize) -> Vec<f64> {
        let mut a = vec![0.0; k * k];
        let mut b = vec![0.0; k * k];
        f64::gemm(k, k, k, &self.p1, false, &self.p2, false, &mut a, false);
        f64::gemm(k, k, k, &a, false, &self.p3, false, &mut b, false);
        f64::gemm(k, k, k, &b, false, &self.p1, true, &mut a, false);
        a
    }
}

/// One anchor / positive / negative triple, each `C × K × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTriplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    /// Per-channel factors of the anchor.
    pub factors: Vec<Factors>,
}

pub fn synth_triplet(rng: &mut Rng, k: usize, channels: usize, alpha: f64) -> SyntheticTriplet {
    let mut t = SyntheticTriplet {
        anchor: Vec::with_capacity(channels * k * k),
        positive: Vec::with_capacity(channels * k * k),
        negative: Vec::with_capacity(channels * k * k),
        factors: Vec::with_capacity(channels),
    };
    for _ in 0..channels {
        let f = Factors::sample(rng, k);
        let fp = f.perturbed(rng, alpha);
        let fnew = Factors::sample(rng, k);
        t.anchor.extend(f.product(k));
        t.positive.extend(fp.product(k));
        t.negative.extend(fnew.product(k));
        t.factors.push(f);
    }
    t
}

/// An anchor alone, for discriminator steps.
pub fn synth_anchor(rng: &mut Rng, k: usize, channels: usize) -> Vec<f64> {
    (0..channels).flat_map(|_| Factors::sample(rng, k).product(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_similarity;

    #[test]
    fn anchor_channel_is_the_factor_product() {
        let t = synth_triplet(&mut Rng::new(1), 5, 2, 0.16);
        for c in 0..2 {
            let f = &t.factors[c];
            let k = 5;
            let at = |m: &[f64], i: usize, j: usize| m[i * k + j];
            for i in 0..k {
                for j in 0..k {
                    let mut want = 0.0;
                    for a in 0..k {
                        for b in 0..k {
                            for d in 0..k {
                                want += at(&f.p1, i, a) * at(&f.p2, a, b) * at(&f.p3, b, d) * at(&f.p1, j, d);
                            }
                        }
                    }
                    let got = t.anchor[c * k * k + i * k + j];
                    assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zero_noise_positive_equals_anchor() {
        let t = synth_triplet(&mut Rng::new(2), 8, 3, 0.0);
        assert_eq!(t.anchor, t.positive);
    }

    #[test]
    fn similarity_statistics_at_desk_scale() {
        let (mut pos, mut neg) = (0.0, 0.0);
        for seed in 0..100 {
            let t = synth_triplet(&mut Rng::new(seed), 64, 1, 0.16);
            pos += cosine_similarity(&t.anchor, &t.positive).unwrap();
            neg += cosine_similarity(&t.anchor, &t.negative).unwrap().abs();
        }
        assert!(pos / 100.0 > 0.8, "{}", pos / 100.0);
        assert!(neg / 100.0 < 0.1, "{}", neg / 100.0);
    }
}

//! Contrastive and adversarial objectives with their gradients.
//!
//! Logit-space forms are used throughout: `log D = −softplus(−z)` and
//! `log(1 − D) = −softplus(z)`.

use super::discriminator::{sigmoid, softplus};
use super::scalar::Real;
use crate::error::{Error, Result};

/// `cos(a, b)` and its gradients with respect to `a` and `b`.
pub fn cosine_with_grad<T: Real>(a: &[T], b: &[T]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let norm = (aa * bb).sqrt();
    let cos = ab / norm;
    let da = a.iter().zip(b).map(|(&x, &y)| y.as_f64() / norm - cos * x.as_f64() / aa).collect();
    let db = a.iter().zip(b).map(|(&x, &y)| x.as_f64() / norm - cos * y.as_f64() / bb).collect();
    Ok((cos, da, db))
}

/// `|1 − cos(v, v⁺)| + |cos(v, v⁻)|` for one triplet.
#[derive(Debug, Clone)]
pub struct Contrastive {
    pub loss: f64,
    pub pos_cos: f64,
    pub neg_cos: f64,
    pub d_anchor: Vec<f64>,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

pub fn contrastive<T: Real>(v: &[T], pos: &[T], neg: &[T]) -> Result<Contrastive> {
    let (cp, dap, dp) = cosine_with_grad(v, pos)?;
    let (cn, dan, dn) = cosine_with_grad(v, neg)?;
    let sp = if 1.0 - cp >= 0.0 { -1.0 } else { 1.0 };
    let sn = if cn >= 0.0 { 1.0 } else { -1.0 };
    Ok(Contrastive {
        loss: (1.0 - cp).abs() + cn.abs(),
        pos_cos: cp,
        neg_cos: cn,
        d_anchor: dap.iter().zip(&dan).map(|(a, b)| sp * a + sn * b).collect(),
        d_pos: dp.iter().map(|g| sp * g).collect(),
        d_neg: dn.iter().map(|g| sn * g).collect(),
    })
}

/// Two-sided cross-entropy of the discriminator:
/// `−mean log D(real) − mean log(1 − D(fake))`.
/// Returns the loss and `∂L/∂z` for both logit sets.
pub fn discriminator_loss(real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let loss = real.iter().map(|&z| softplus(-z)).sum::<f64>() / nr + fake.iter().map(|&z| softplus(z)).sum::<f64>() / nf;
    let dr = real.iter().map(|&z| -sigmoid(-z) / nr).collect();
    let df = fake.iter().map(|&z| sigmoid(z) / nf).collect();
    (loss, dr, df)
}

/// Generator adversarial term `mean log(1 − D(v))` and `∂/∂z`.
pub fn generator_adversarial(fake: &[f64]) -> (f64, Vec<f64>) {
    let n = fake.len() as f64;
    let loss = -fake.iter().map(|&z| softplus(z)).sum::<f64>() / n;
    let dz = fake.iter().map(|&z| -sigmoid(z) / n).collect();
    (loss, dz)
}

/// Fraction of correct calls at the 0.5 threshold.
pub fn discriminator_accuracy(real: &[f64], fake: &[f64]) -> f64 {
    let hits = real.iter().filter(|&&z| z > 0.0).count() + fake.iter().filter(|&&z| z <= 0.0).count();
    hits as f64 / (real.len() + fake.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        v
    }

    #[test]
    fn contrastive_extremes() {
        let v = vec![1.0, 2.0, 0.0, 0.0];
        let perp = vec![0.0, 0.0, 3.0, 0.0];
        assert!(contrastive(&v, &v, &perp).unwrap().loss.abs() < 1e-15);
        assert!((contrastive(&v, &perp, &v).unwrap().loss - 2.0).abs() < 1e-15);
        assert!(matches!(contrastive(&v, &[0.0; 4], &perp), Err(Error::ZeroNorm)));
    }

    #[test]
    fn adversarial_at_one_half() {
        let (l, _) = generator_adversarial(&[0.0, 0.0, 0.0]);
        assert!((l - 0.5f64.ln()).abs() < 1e-15);
        let (d, _, _) = discriminator_loss(&[0.0], &[0.0]);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn contrastive_gradient_matches_differences() {
        let v = vec![0.3, -1.2, 0.5, 2.0];
        let p = vec![0.1, -1.0, 0.9, 1.5];
        let n = vec![-0.7, 0.2, 0.4, -0.1];
        let c = contrastive(&v, &p, &n).unwrap();
        let eps = 1e-7;
        for i in 0..4 {
            let e = basis(i);
            let shift = |x: &[f64], s: f64| x.iter().zip(&e).map(|(a, b)| a + s * b).collect::<Vec<_>>();
            let fd = |f: &dyn Fn(f64) -> f64| (f(eps) - f(-eps)) / (2.0 * eps);
            let ga = fd(&|s| contrastive(&shift(&v, s), &p, &n).unwrap().loss);
            let gp = fd(&|s| contrastive(&v, &shift(&p, s), &n).unwrap().loss);
            let gn = fd(&|s| contrastive(&v, &p, &shift(&n, s)).unwrap().loss);
            assert!((ga - c.d_anchor[i]).abs() < 1e-7);
            assert!((gp - c.d_pos[i]).abs() < 1e-7);
            assert!((gn - c.d_neg[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn logit_gradients_match_differences() {
        let real = [0.4, -1.3];
        let fake = [2.0, -0.5, 0.1];
        let (_, dr, df) = discriminator_loss(&real, &fake);
        let (_, dg) = generator_adversarial(&fake);
        let eps = 1e-6;
        for i in 0..2 {
            let mut a = real;
            a[i] += eps;
            let mut b = real;
            b[i] -= eps;
            let fd = (discriminator_loss(&a, &fake).0 - discriminator_loss(&b, &fake).0) / (2.0 * eps);
            assert!((fd - dr[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let mut a = fake;
            a[i] += eps;
            let mut b = fake;
            b[i] -= eps;
            let fd = (discriminator_loss(&real, &a).0 - discriminator_loss(&real, &b).0) / (2.0 * eps);
            assert!((fd - df[i]).abs() < 1e-8);
            let fd = (generator_adversarial(&a).0 - generator_adversarial(&b).0) / (2.0 * eps);
            assert!((fd - dg[i]).abs() < 1e-8);
        }
    }
}

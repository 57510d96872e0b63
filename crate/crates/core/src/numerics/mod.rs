//! Dense linear algebra, seeded sampling and similarity kernels.
//!
//! Values are stored as `f32`; every reduction (dot products, norms, matrix
//! products) accumulates in `f64`.

mod linalg;
mod permutation;
mod rng;

pub use linalg::{condition_number, inverse, symmetric_eigenvalues};
pub use permutation::{sample_permutation, Permutation};
pub use rng::{Rng, RNG_ALGORITHM};

use crate::error::{Error, Result};

/// Default ceiling on the condition number of sampled invertible matrices.
pub const DEFAULT_COND_MAX: f64 = 1e4;

const MAX_INVERTIBLE_ATTEMPTS: usize = 64;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dims("Matrix::from_vec", rows * cols, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {i}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from `f64` values, rounding to storage precision.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Matrix::from_vec(rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dims("matmul", self.cols, rhs.rows));
        }
        let out = matmul_f64(&self.to_f64(), &rhs.to_f64(), self.rows, self.cols, rhs.cols);
        Matrix::from_f64(self.rows, rhs.cols, &out)
    }

    /// `self · rhsᵀ`, without materializing the transpose.
    pub fn matmul_transposed(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::dims("matmul_transposed", self.cols, rhs.cols));
        }
        let mut out = vec![0.0f64; self.rows * rhs.rows];
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Matrix::from_f64(self.rows, rhs.rows, &out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::dims("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major `f64` product of an `m×k` and a `k×n` matrix.
pub(crate) fn matmul_f64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity accumulated in `f64`, clamped to `[-1, 1]`.
///
/// The denominator is `sqrt(|a|²·|b|²)` so that identical inputs give exactly
/// `1.0`.
pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// I.i.d. `N(mean, std²)` entries, row-major draw order.
pub fn sample_gaussian(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
    assert!(std >= 0.0, "negative standard deviation");
    Matrix::from_fn(rows, cols, |_, _| (mean + std * rng.normal()) as f32)
}

/// Gaussian draw with entries `N(0, 1/n)` resampled until its condition number
/// is at most `cond_max`.
pub fn sample_invertible(rng: &mut Rng, n: usize, cond_max: f64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !(cond_max > 1.0) {
        return Err(Error::InvalidArgument("cond_max must exceed 1".into()));
    }
    let std = 1.0 / (n as f64).sqrt();
    for _ in 0..MAX_INVERTIBLE_ATTEMPTS {
        let m = sample_gaussian(rng, n, n, 0.0, std);
        match condition_number(&m) {
            Ok(c) if c <= cond_max => return Ok(m),
            _ => continue,
        }
    }
    Err(Error::IllConditioned {
        cond_max,
        attempts: MAX_INVERTIBLE_ATTEMPTS,
    })
}

/// Places square blocks along the diagonal.
pub fn block_diagonal(blocks: &[Matrix]) -> Matrix {
    let n: usize = blocks.iter().map(Matrix::rows).sum();
    let mut out = Matrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        for r in 0..b.rows() {
            for c in 0..b.cols() {
                out.set(off + r, off + c, b.get(r, c));
            }
        }
        off += b.rows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop, prop_assert, prop_assume, proptest};

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0f32, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 1 / sqrt(2)
        let direct = 1.0 / (1.0f64 * 2.0f64.sqrt());
        assert_abs_diff_eq!(
            cosine_similarity(&[1.0f32, 0.0], &[1.0, 1.0]).unwrap(),
            direct,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(direct, 0.7071068, epsilon = 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0f32], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0f32, 0.0], &[1.0, 2.0]),
            Err(Error::ZeroNorm)
        ));
        assert!(matches!(
            cosine_similarity::<f32>(&[], &[]),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn self_cosine_is_exactly_one() {
        let mut rng = Rng::new(3);
        let m = sample_gaussian(&mut rng, 17, 13, 0.0, 0.02);
        assert_eq!(cosine_similarity(m.as_slice(), m.as_slice()).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn cosine_scale_invariance(
            v in prop::collection::vec(-10.0f64..10.0, 1..64),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let pos: Vec<f64> = v.iter().map(|x| x * alpha).collect();
            let neg: Vec<f64> = v.iter().map(|x| -x * alpha).collect();
            prop_assert!((cosine_similarity(&v, &pos).unwrap() - 1.0).abs() < 1e-6);
            prop_assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_zero_std_is_constant() {
        let mut rng = Rng::new(7);
        assert_eq!(sample_gaussian(&mut rng, 2, 2, 0.0, 0.0), Matrix::zeros(2, 2));
    }

    #[test]
    fn gaussian_mean_and_determinism() {
        let a = sample_gaussian(&mut Rng::new(7), 64, 64, 0.0, 1.0);
        let b = sample_gaussian(&mut Rng::new(7), 64, 64, 0.0, 1.0);
        assert_eq!(a, b);
        let mean = a.as_slice().iter().map(|&v| v as f64).sum::<f64>() / 4096.0;
        assert!(mean.abs() <= 0.1, "mean {mean}");
    }

    #[test]
    fn invertible_one_by_one() {
        let c = sample_invertible(&mut Rng::new(1), 1, 10.0).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert!(c.get(0, 0) != 0.0);
    }

    #[test]
    fn invertible_times_inverse_is_identity() {
        let c = sample_invertible(&mut Rng::new(11), 8, 1e3).unwrap();
        let ci = inverse(&c).unwrap();
        let prod = c.matmul(&ci).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(8)).unwrap() < 1e-5);
    }

    #[test]
    fn invertible_rejects_bad_args() {
        assert!(sample_invertible(&mut Rng::new(1), 0, 10.0).is_err());
        assert!(sample_invertible(&mut Rng::new(1), 3, 1.0).is_err());
    }

    #[test]
    fn matmul_transposed_matches_explicit_transpose() {
        let mut rng = Rng::new(2);
        let a = sample_gaussian(&mut rng, 5, 7, 0.0, 1.0);
        let b = sample_gaussian(&mut rng, 4, 7, 0.0, 1.0);
        let x = a.matmul_transposed(&b).unwrap();
        let y = a.matmul(&b.transpose()).unwrap();
        assert!(x.max_abs_diff(&y).unwrap() < 1e-6);
    }

    #[test]
    fn from_vec_validates() {
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn block_diagonal_layout() {
        let a = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = block_diagonal(&[a, b]);
        assert_eq!(
            m.as_slice(),
            &[2.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]
        );
    }
}

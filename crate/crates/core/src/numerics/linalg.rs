use super::{matmul_f64, Matrix};
use crate::error::{Error, Result};

/// Gauss-Jordan inverse with partial pivoting, computed in `f64`.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    let (n, c) = m.shape();
    if n != c {
        return Err(Error::dims("inverse (square)", (n, n), (n, c)));
    }
    let inv = inverse_f64(&m.to_f64(), n)?;
    Matrix::from_f64(n, n, &inv)
}

pub(crate) fn inverse_f64(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut a = a.to_vec();
    let mut inv = vec![0.0f64; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Singular);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() <= scale * 1e-14 {
            return Err(Error::Singular);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
                inv.swap(pivot * n + k, col * n + k);
            }
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[r * n + k] -= f * a[col * n + k];
                inv[r * n + k] -= f * inv[col * n + k];
            }
        }
    }
    Ok(inv)
}

/// Eigenvalues of a symmetric `n×n` matrix by cyclic Jacobi rotations,
/// sorted ascending.
pub fn symmetric_eigenvalues(sym: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(sym.len(), n * n);
    let mut a = sym.to_vec();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s
    };
    let total: f64 = a.iter().map(|v| v * v).sum();
    for _sweep in 0..100 {
        if off(&a) <= total * 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// 2-norm condition number `σ_max / σ_min`.
pub fn condition_number(m: &Matrix) -> Result<f64> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::dims("condition_number (square)", (r, r), (r, c)));
    }
    let n = r;
    let a = m.to_f64();
    let mut at = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            at[j * n + i] = a[i * n + j];
        }
    }
    let gram = matmul_f64(&at, &a, n, n, n);
    let eig = symmetric_eigenvalues(&gram, n);
    let (lo, hi) = (eig[0], eig[n - 1]);
    if lo <= 0.0 || hi <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((hi / lo).sqrt())
}

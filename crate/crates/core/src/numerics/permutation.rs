use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Matrix, Rng};

/// Permutation matrix `P` stored as an index map: `P[i][map[i]] = 1`.
///
/// All products with `P` are pure index moves, so applying a permutation and
/// then its inverse is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    /// Returns `None` unless `map` is a bijection on `0..map.len()`.
    pub fn from_map(map: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; map.len()];
        for &j in &map {
            if j >= map.len() || std::mem::replace(&mut seen[j], true) {
                return None;
            }
        }
        Some(Permutation(map))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// `P⁻¹ = Pᵀ`.
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }

    pub fn to_matrix(&self) -> Matrix {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in self.0.iter().enumerate() {
            m.set(i, j, 1.0);
        }
        m
    }

    /// Row vector times `P`.
    pub fn apply_vec<T: Copy + Default>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.len(), "permutation length mismatch");
        let mut out = vec![T::default(); v.len()];
        for (i, &j) in self.0.iter().enumerate() {
            out[j] = v[i];
        }
        out
    }

    /// `X · P`: moves column `i` to column `map[i]`.
    pub fn right_multiply(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.len(), "permutation length mismatch");
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            for (i, &j) in self.0.iter().enumerate() {
                out.set(r, j, x.get(r, i));
            }
        }
        out
    }

    /// `Pᵀ · W`: moves row `i` to row `map[i]`.
    pub fn transpose_left_multiply(&self, w: &Matrix) -> Matrix {
        assert_eq!(w.rows(), self.len(), "permutation length mismatch");
        let cols = w.cols();
        let mut out = Matrix::zeros(w.rows(), cols);
        for (i, &j) in self.0.iter().enumerate() {
            out.as_mut_slice()[j * cols..(j + 1) * cols].copy_from_slice(w.row(i));
        }
        out
    }

    /// The permutation whose matrix is `self · other`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation(self.0.iter().map(|&j| other.0[j]).collect())
    }
}

/// Uniformly random permutation of size `n` (Fisher-Yates).
pub fn sample_permutation(rng: &mut Rng, n: usize) -> Permutation {
    assert!(n >= 1, "permutation size must be positive");
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng);
    Permutation(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_gaussian;

    #[test]
    fn size_one_is_identity() {
        let p = sample_permutation(&mut Rng::new(0), 1);
        assert_eq!(p.to_matrix().as_slice(), &[1.0]);
    }

    #[test]
    fn one_entry_per_row_and_column_and_orthogonal() {
        for seed in 0..10 {
            let p = sample_permutation(&mut Rng::new(seed), 7).to_matrix();
            for i in 0..7 {
                let row: f32 = (0..7).map(|j| p.get(i, j)).sum();
                let col: f32 = (0..7).map(|j| p.get(j, i)).sum();
                assert_eq!((row, col), (1.0, 1.0));
            }
            assert_eq!(p.matmul(&p.transpose()).unwrap(), Matrix::identity(7));
        }
    }

    #[test]
    fn roundtrip_on_vector() {
        let p = sample_permutation(&mut Rng::new(3), 4);
        let v = [1, 2, 3, 4];
        let moved = p.apply_vec(&v);
        assert_eq!(p.inverse().apply_vec(&moved), v);
    }

    #[test]
    fn inverse_matrix_is_transpose() {
        let p = sample_permutation(&mut Rng::new(8), 9);
        assert_eq!(p.inverse().to_matrix(), p.to_matrix().transpose());
    }

    #[test]
    fn index_products_match_dense_products() {
        let mut rng = Rng::new(12);
        let p = sample_permutation(&mut rng, 5);
        let x = sample_gaussian(&mut rng, 3, 5, 0.0, 1.0);
        let w = sample_gaussian(&mut rng, 5, 4, 0.0, 1.0);
        let pm = p.to_matrix();
        assert_eq!(p.right_multiply(&x), x.matmul(&pm).unwrap());
        assert_eq!(
            p.transpose_left_multiply(&w),
            pm.transpose().matmul(&w).unwrap()
        );
        let v: Vec<f32> = x.row(0).to_vec();
        assert_eq!(p.apply_vec(&v), p.right_multiply(&x).row(0).to_vec());
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = Rng::new(1);
        let a = sample_permutation(&mut rng, 6);
        let b = sample_permutation(&mut rng, 6);
        assert_eq!(
            a.compose(&b).to_matrix(),
            a.to_matrix().matmul(&b.to_matrix()).unwrap()
        );
    }

    #[test]
    fn from_map_rejects_non_bijections() {
        assert!(Permutation::from_map(vec![0, 0]).is_none());
        assert!(Permutation::from_map(vec![2, 0]).is_none());
        assert!(Permutation::from_map(vec![1, 0]).is_some());
    }
}

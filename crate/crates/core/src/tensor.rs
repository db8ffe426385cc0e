//! Fully symmetric rank-3 and rank-4 arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Fully symmetric rank-3 tensor stored by its independent entries `i <= j <= k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

fn sort3(i: usize, j: usize, k: usize) -> (usize, usize, usize) {
    let (mut a, mut b, mut c) = (i, j, k);
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    if b > c {
        std::mem::swap(&mut b, &mut c);
    }
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    (a, b, c)
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; Self::independent_len(n)] }
    }

    /// `n(n+1)(n+2)/6`.
    pub fn independent_len(n: usize) -> usize {
        n * (n + 1) * (n + 2) / 6
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.n;
        let (a, b, c) = sort3(i, j, k);
        debug_assert!(c < n);
        let mut off = 0;
        for p in 0..a {
            off += (n - p) * (n - p + 1) / 2;
        }
        for q in a..b {
            off += n - q;
        }
        off + (c - b)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    /// Sets the entry and, implicitly, all its permutations.
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// Independent index triples `i <= j <= k` in storage order.
    pub fn index_triples(n: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(Self::independent_len(n));
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    out.push((i, j, k));
                }
            }
        }
        out
    }

    /// Number of distinct permutations of the triple.
    pub fn multiplicity(i: usize, j: usize, k: usize) -> usize {
        let (a, b, c) = sort3(i, j, k);
        match (a == b, b == c) {
            (true, true) => 1,
            (false, false) => 6,
            _ => 3,
        }
    }

    /// `sum_{ijk} c_ijk^2` over all (not only independent) index triples.
    pub fn frobenius_sq(&self) -> f64 {
        Self::index_triples(self.n)
            .iter()
            .zip(&self.data)
            .map(|(&(i, j, k), v)| Self::multiplicity(i, j, k) as f64 * v * v)
            .sum()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * t).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Coordinates `x_t = sqrt(m_t) c_t`, in which the Euclidean norm is the Frobenius norm.
    pub fn to_scaled_coords(&self) -> DVector<f64> {
        let triples = Self::index_triples(self.n);
        DVector::from_iterator(
            self.data.len(),
            triples.iter().zip(&self.data).map(|(&(i, j, k), v)| (Self::multiplicity(i, j, k) as f64).sqrt() * v),
        )
    }

    pub fn from_scaled_coords(n: usize, x: &DVector<f64>) -> Result<Self> {
        let triples = Self::index_triples(n);
        if x.len() != triples.len() {
            return domain(format!("expected {} coordinates, got {}", triples.len(), x.len()));
        }
        let data = triples.iter().zip(x.iter()).map(|(&(i, j, k), v)| v / (Self::multiplicity(i, j, k) as f64).sqrt()).collect();
        Ok(Self { n, data })
    }

    /// Builds from a full `n^3` array (index `(i*n + j)*n + k`), symmetrizing.
    pub fn from_full(n: usize, full: &[f64]) -> Result<Self> {
        if full.len() != n * n * n {
            return domain(format!("expected {} entries, got {}", n * n * n, full.len()));
        }
        let mut t = Self::zeros(n);
        for (i, j, k) in Self::index_triples(n) {
            let perms = [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)];
            let s: f64 = perms.iter().map(|&(a, b, c)| full[(a * n + b) * n + c]).sum();
            t.set(i, j, k, s / 6.0);
        }
        Ok(t)
    }

    /// `c'_abc = sum_{ijk} c_ijk Q_ia Q_jb Q_kc`; with eigenvectors as the
    /// columns of `q` this expresses `c` in the eigenbasis.
    pub fn rotate(&self, q: &DMatrix<f64>) -> Self {
        let n = self.n;
        let mut full = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    full[(i * n + j) * n + k] = self.get(i, j, k);
                }
            }
        }
        let contract = |src: &[f64], axis: usize| {
            let mut dst = vec![0.0; n * n * n];
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let mut s = 0.0;
                        for m in 0..n {
                            let idx = match axis {
                                0 => (m * n + b) * n + c,
                                1 => (a * n + m) * n + c,
                                _ => (a * n + b) * n + m,
                            };
                            let out = [a, b, c][axis];
                            s += src[idx] * q[(m, out)];
                        }
                        dst[(a * n + b) * n + c] = s;
                    }
                }
            }
            dst
        };
        let r = contract(&contract(&contract(&full, 0), 1), 2);
        Self::from_full(n, &r).expect("sizes match")
    }

    /// The symmetric slice `(c_ijk)_{ij}` for fixed `k`.
    pub fn slice(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j, k))
    }
}

/// Fully symmetric rank-4 tensor in full storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n * n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.n + j) * self.n + k) * self.n + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.idx(i, j, k, l)]
    }

    /// Sets all permutations of `(i, j, k, l)`.
    pub fn set_symmetric(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let ix = [i, j, k, l];
        for p in PERMS4 {
            let o = self.idx(ix[p[0]], ix[p[1]], ix[p[2]], ix[p[3]]);
            self.data[o] = v;
        }
    }
}

const PERMS4: [[usize; 4]; 24] = [
    [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
    [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
    [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
    [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn storage_is_permutation_invariant() {
        let n = 4;
        let mut t = Tensor3::zeros(n);
        for (idx, (i, j, k)) in Tensor3::index_triples(n).into_iter().enumerate() {
            t.set(i, j, k, idx as f64);
        }
        for (idx, (i, j, k)) in Tensor3::index_triples(n).into_iter().enumerate() {
            for (a, b, c) in [(i, j, k), (k, j, i), (j, k, i), (j, i, k)] {
                assert_eq!(t.get(a, b, c), idx as f64);
            }
        }
        assert_eq!(Tensor3::independent_len(3), 10);
    }

    #[test]
    fn frobenius_counts_permutations() {
        let mut t = Tensor3::zeros(3);
        t.set(0, 0, 2, 1.0);
        t.set(0, 1, 2, 1.0);
        t.set(2, 2, 2, 1.0);
        assert_eq!(t.frobenius_sq(), 3.0 + 6.0 + 1.0);
        assert!((t.to_scaled_coords().norm_squared() - 10.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn scaled_coords_roundtrip(v in proptest::collection::vec(-3.0f64..3.0, 20)) {
            let n = 4;
            let x = DVector::from_column_slice(&v);
            let t = Tensor3::from_scaled_coords(n, &x).unwrap();
            prop_assert!((t.to_scaled_coords() - &x).amax() < 1e-14);
            prop_assert!((t.frobenius_sq() - x.norm_squared()).abs() < 1e-12);
        }

        #[test]
        fn rotation_preserves_norm(v in proptest::collection::vec(-3.0f64..3.0, 10), th in 0.0f64..6.3) {
            let t = Tensor3::from_scaled_coords(3, &DVector::from_column_slice(&v)).unwrap();
            let (c, s) = (th.cos(), th.sin());
            let q = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
            let r = t.rotate(&q);
            prop_assert!((r.frobenius_sq() - t.frobenius_sq()).abs() < 1e-10);
            let back = r.rotate(&q.transpose());
            prop_assert!((back.to_scaled_coords() - t.to_scaled_coords()).amax() < 1e-12);
        }
    }
}

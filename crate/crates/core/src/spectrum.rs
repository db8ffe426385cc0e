//! Elementary symmetric functions, branch classification and linearized
//! coefficients of the quadratic Hessian operator.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Default tolerance for deciding whether `sigma_2 == 1`.
pub const DEFAULT_BRANCH_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues of a Hessian (or of its Legendre–Lewy image). Never sorted implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return domain(format!("spectrum needs n >= 2 values, got {}", values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return domain(format!("non-finite eigenvalue {v}"));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the smallest eigenvalue (first one on ties).
    pub fn argmin(&self) -> usize {
        argext(&self.values, |a, b| a < b)
    }

    /// Index of the largest eigenvalue (first one on ties).
    pub fn argmax(&self) -> usize {
        argext(&self.values, |a, b| a > b)
    }

    /// Eigenvalues in descending order.
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

fn argext(v: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if better(x, v[best]) {
            best = i;
        }
    }
    best
}

/// All elementary symmetric functions `e_0..=e_k` of `values`.
pub fn elementary_symmetric(values: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &x in values {
        for j in (1..=k).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// `sigma_k` of the spectrum; `sigma_0 = 1`.
pub fn spectrum_sigma(s: &Spectrum, k: usize) -> Result<f64> {
    if k > s.n() {
        return domain(format!("sigma_{k} undefined for n = {}", s.n()));
    }
    Ok(elementary_symmetric(s.values(), k)[k])
}

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Validates symmetry to `1e-12` relative and symmetrizes the residue.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return domain(format!("matrix must be square and nonempty, got {}x{}", n, m.ncols()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return domain("matrix has non-finite entries");
        }
        let scale = m.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::Asymmetric { i, j, gap });
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self { m: sym })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return domain("rows must form a square matrix");
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self { m: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)) }
    }

    pub fn identity(n: usize) -> Self {
        Self { m: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        Self { m: DMatrix::zeros(n, n) }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.m.iter().map(|v| v * v).sum()
    }

    /// Eigenvalues (ascending) and matching orthonormal eigenvectors as columns.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.m.clone());
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(self.n(), self.n(), |r, c| eig.eigenvectors[(r, order[c])]);
        (vals, vecs)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::new(self.eigenvalues())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    PositiveBranch,
    NegativeBranch,
    OffLevelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub sigma2: f64,
    pub trace: f64,
    pub hess_norm_sq: f64,
    /// `trace - sqrt(2 + |H|^2)`.
    pub concave_residual: f64,
    pub branch: Branch,
}

/// `sigma_2` via the trace identity, with branch classification at tolerance `tol`.
pub fn sigma2_matrix(h: &SymMatrix, tol: f64) -> BranchReport {
    let trace = h.trace();
    let hess_norm_sq = h.frobenius_sq();
    let sigma2 = 0.5 * (trace * trace - hess_norm_sq);
    let concave_residual = trace - (2.0 + hess_norm_sq).sqrt();
    let branch = if (sigma2 - 1.0).abs() <= tol {
        if trace > 0.0 {
            Branch::PositiveBranch
        } else if trace < 0.0 {
            Branch::NegativeBranch
        } else {
            Branch::OffLevelSet
        }
    } else {
        Branch::OffLevelSet
    };
    BranchReport { sigma2, trace, hess_norm_sq, concave_residual, branch }
}

#[derive(Debug, Clone)]
pub struct LinearizedCoefficients {
    /// `tr(H) I - H`.
    pub f: SymMatrix,
    /// `I - H / sqrt(2 + |H|^2)`.
    pub fc: SymMatrix,
    pub f_min_eig: f64,
    pub fc_min_eig: f64,
    pub f_posdef: bool,
    pub fc_posdef: bool,
}

pub fn linearized_coefficients(h: &SymMatrix) -> LinearizedCoefficients {
    let n = h.n();
    let id = DMatrix::<f64>::identity(n, n);
    let f = SymMatrix { m: &id * h.trace() - h.matrix() };
    let fc = SymMatrix { m: &id - h.matrix() / (2.0 + h.frobenius_sq()).sqrt() };
    let f_min_eig = f.min_eigenvalue();
    let fc_min_eig = fc.min_eigenvalue();
    LinearizedCoefficients {
        f,
        fc,
        f_min_eig,
        fc_min_eig,
        f_posdef: f_min_eig > 0.0,
        fc_posdef: fc_min_eig > 0.0,
    }
}

/// `sum_i arctan(lambda_i)`.
pub fn lagrangian_phase(s: &Spectrum) -> f64 {
    s.values().iter().map(|v| v.atan()).sum()
}

/// `(K, ..., K, -(n-2)K/2 + 1/((n-1)K))`, which lies on `sigma_2 = 1`.
pub fn extreme_configuration(n: usize, k: f64) -> Result<Spectrum> {
    if n < 3 {
        return domain(format!("extreme configuration needs n >= 3, got {n}"));
    }
    if !(k > 0.0) || !k.is_finite() {
        return domain(format!("extreme configuration needs K > 0, got {k}"));
    }
    let mut v = vec![k; n];
    v[n - 1] = -((n - 2) as f64) * k / 2.0 + 1.0 / ((n - 1) as f64 * k);
    Spectrum::new(v)
}

/// `c_n = (sqrt(3n^2 + 1) - n + 1) / (2n)`.
pub fn almost_jacobi_constant(n: usize) -> f64 {
    let nf = n as f64;
    ((3.0 * nf * nf + 1.0).sqrt() - nf + 1.0) / (2.0 * nf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    /// `lambda_min / trace`.
    pub ratio: f64,
    /// `-(n-2)/n`.
    pub bound: f64,
    pub c_n: f64,
    pub bound_ok: bool,
    pub dynamic_ok: bool,
}

pub fn min_ratio(s: &Spectrum) -> Result<RatioReport> {
    let t = s.trace();
    if !(t > 0.0) {
        return Err(Error::Branch(format!("min_ratio needs a positive trace, got {t}")));
    }
    let n = s.n();
    let ratio = s.min() / t;
    let bound = -((n - 2) as f64) / n as f64;
    let c_n = almost_jacobi_constant(n);
    Ok(RatioReport { ratio, bound, c_n, bound_ok: ratio > bound, dynamic_ok: c_n + ratio >= 0.0 })
}

/// Raw Lin–Trudinger ratios `f_i = trace - lambda_i` against the top eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinTrudingerRatios {
    pub lambda_max: f64,
    pub f_top_times_top: f64,
    pub f_top_over_top: f64,
    /// `f_{lambda_k} / lambda_max` for the remaining eigenvalues in descending order.
    pub f_rest_over_top: Vec<f64>,
}

pub fn lin_trudinger_ratios(s: &Spectrum) -> Result<LinTrudingerRatios> {
    let sorted = s.sorted_desc();
    let top = sorted[0];
    if !(top > 0.0) {
        return Err(Error::Branch(format!("largest eigenvalue must be positive, got {top}")));
    }
    let t = s.trace();
    let f_top = t - top;
    Ok(LinTrudingerRatios {
        lambda_max: top,
        f_top_times_top: f_top * top,
        f_top_over_top: f_top / top,
        f_rest_over_top: sorted[1..].iter().map(|l| (t - l) / top).collect(),
    })
}

/// Completes `rest = (lambda_2..lambda_n)` to a point of `sigma_2 = 1` on the
/// positive branch. `sigma_2` is affine in `lambda_1` with slope `S = sum(rest)`,
/// and the positive branch is exactly `S > 0`.
pub fn complete_on_branch(rest: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = rest.iter().sum();
    if !(s > 0.0) {
        return None;
    }
    let rest_sigma2 = elementary_symmetric(rest, 2)[2];
    let l1 = (1.0 - rest_sigma2) / s;
    if !l1.is_finite() {
        return None;
    }
    let mut v = Vec::with_capacity(rest.len() + 1);
    v.push(l1);
    v.extend_from_slice(rest);
    Some(v)
}

/// Draws a spectrum on `sigma_2 = 1`, `trace > 0`, all eigenvalues `>= floor`
/// when a floor is given. Scales are log-uniform over `[0.1, 100]`.
pub fn sample_on_branch<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    floor: Option<f64>,
    max_attempts: usize,
) -> Result<Spectrum> {
    if n < 2 {
        return domain(format!("sampling needs n >= 2, got {n}"));
    }
    let mut rest = vec![0.0; n - 1];
    for _ in 0..max_attempts {
        let scale = 10f64.powf(rng.random_range(-1.0..2.0));
        let lo = floor.map_or(-scale, |f| f.max(-scale));
        let hi = if lo < scale { scale } else { lo + scale };
        for r in rest.iter_mut() {
            *r = rng.random_range(lo..hi);
        }
        if let Some(v) = complete_on_branch(&rest) {
            if floor.is_none_or(|f| v[0] >= f) {
                return Spectrum::new(v);
            }
        }
    }
    Err(Error::Sampling(max_attempts))
}

//! Pointwise Jacobi-type inequalities `Delta_F b >= kappa |grad_F b|^2` as
//! quadratic forms in the third derivatives, evaluated in the eigenbasis of
//! `D^2 u` where `F = diag(trace - lambda_k)`.
//!
//! Fourth derivatives are eliminated with the twice-differentiated equation
//! `sum_k F_kk u_kkpq = sum_ij c_ijp c_ijq - t_p t_q`, `t_k = sum_i c_iik`.

mod diagnostics;
mod scan;

pub use diagnostics::{doubling_ratio, guan_qiu_p, DoublingReport, GuanQiuField};
pub use scan::{manifold_scan, trace_threshold, ScanDomain, ScanResult, ThresholdEstimate};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::spectrum::{almost_jacobi_constant, sample_on_branch, spectrum_sigma, Spectrum, SymMatrix};
use crate::tensor::{Tensor3, Tensor4};

/// Smallest admissible spacing between the top two eigenvalues for `ln lambda_max`.
pub const EIGEN_GAP_TOL: f64 = 1e-7;

const SAMPLE_MARGIN: f64 = 1e-6;
const MAX_SAMPLE_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JacobiKind {
    /// `b = ln(trace + nK)`.
    ShiftedTrace,
    /// `b = ln(trace)`.
    LogTrace,
    /// `b = ln(lambda_max + K)`.
    LogLambdaMax,
    /// `b = ln(trace)` with coefficient `c_n + lambda_min / trace` (`1/3` when `n = 3`).
    AlmostJacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiQuantity {
    pub kind: JacobiKind,
    pub k: f64,
    /// Replaces the default coefficient when set.
    pub kappa: Option<f64>,
}

impl JacobiQuantity {
    pub fn shifted_trace(k: f64) -> Self {
        Self { kind: JacobiKind::ShiftedTrace, k, kappa: None }
    }

    pub fn log_trace() -> Self {
        Self { kind: JacobiKind::LogTrace, k: 0.0, kappa: None }
    }

    pub fn log_lambda_max(k: f64) -> Self {
        Self { kind: JacobiKind::LogLambdaMax, k, kappa: None }
    }

    pub fn almost_jacobi() -> Self {
        Self { kind: JacobiKind::AlmostJacobi, k: 0.0, kappa: None }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(kappa);
        self
    }

    /// The coefficient `kappa` in front of `|grad_F b|^2` at `lam`.
    pub fn coefficient(&self, lam: &Spectrum) -> f64 {
        if let Some(k) = self.kappa {
            return k;
        }
        match self.kind {
            JacobiKind::AlmostJacobi if lam.n() == 3 => 1.0 / 3.0,
            JacobiKind::AlmostJacobi => almost_jacobi_constant(lam.n()) + lam.min() / lam.trace(),
            _ => 1.0,
        }
    }
}

/// Validated point data shared by both evaluation routes.
struct Point {
    n: usize,
    lam: Vec<f64>,
    f: Vec<f64>,
    kappa: f64,
    /// Argument of the logarithm.
    v: f64,
    top: usize,
}

fn prepare(lam: &Spectrum, q: &JacobiQuantity) -> Result<Point> {
    let n = lam.n();
    let t = lam.trace();
    if !(t > 0.0) {
        return Err(Error::Branch(format!("trace must be positive, got {t}")));
    }
    let s2 = spectrum_sigma(lam, 2)?;
    let norm_sq: f64 = lam.values().iter().map(|v| v * v).sum();
    if (s2 - 1.0).abs() > 1e-8 * (1.0 + norm_sq) {
        return Err(Error::Branch(format!("spectrum is off the level set: sigma_2 = {s2}")));
    }
    if !(q.k >= 0.0) {
        return domain(format!("K must be nonnegative, got {}", q.k));
    }
    if q.kind == JacobiKind::AlmostJacobi && n < 3 {
        return domain("almost-Jacobi coefficient needs n >= 3");
    }
    let top = lam.argmax();
    let v = match q.kind {
        JacobiKind::ShiftedTrace => t + n as f64 * q.k,
        JacobiKind::LogTrace | JacobiKind::AlmostJacobi => t,
        JacobiKind::LogLambdaMax => {
            let sorted = lam.sorted_desc();
            let gap = sorted[0] - sorted[1];
            if gap < EIGEN_GAP_TOL {
                return Err(Error::DegenerateEigenvalue(gap));
            }
            lam.values()[top] + q.k
        }
    };
    if !(v > 0.0) {
        return domain(format!("logarithm argument must be positive, got {v}"));
    }
    Ok(Point {
        n,
        lam: lam.values().to_vec(),
        f: lam.values().iter().map(|l| t - l).collect(),
        kappa: q.coefficient(lam),
        v,
        top,
    })
}

fn check_constraint(p: &Point, c: &Tensor3) -> Result<()> {
    if c.n() != p.n {
        return domain(format!("tensor dimension {} does not match spectrum dimension {}", c.n(), p.n));
    }
    let fmax = p.f.iter().copied().fold(0.0, f64::max);
    let tol = 1e-8 * fmax * c.max_abs().max(f64::MIN_POSITIVE);
    let worst = (0..p.n)
        .map(|k| (0..p.n).map(|i| p.f[i] * c.get(i, i, k)).sum::<f64>().abs())
        .fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::Constraint(worst));
    }
    Ok(())
}

/// `sum_k (|d_k D^2 u|^2 - (d_k trace)^2)`, which equals `Delta_F(trace)` on
/// solutions. Rotation invariant, so any orthonormal frame may be used.
pub fn trace_second_variation(c: &Tensor3) -> f64 {
    let n = c.n();
    let tk: f64 = (0..n).map(|k| (0..n).map(|i| c.get(i, i, k)).sum::<f64>().powi(2)).sum();
    c.frobenius_sq() - tk
}

/// `Delta_F(Delta u) = sum_ij F_ij sum_k u_kkij` from explicit fourth derivatives,
/// with `F = trace I - D^2 u`. Compare with [`trace_second_variation`].
pub fn linearized_laplacian_of_trace(h: &SymMatrix, fourth: &Tensor4) -> Result<f64> {
    let n = h.n();
    if fourth.n() != n {
        return domain("Hessian and fourth-derivative dimensions differ");
    }
    let tr = h.trace();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let f = if i == j { tr } else { 0.0 } - h.get(i, j);
            s += f * (0..n).map(|k| fourth.get(k, k, i, j)).sum::<f64>();
        }
    }
    Ok(s)
}

/// `Delta_F b - kappa |grad_F b|^2` evaluated by direct contraction.
pub fn jacobi_gap(lam: &Spectrum, c: &Tensor3, q: &JacobiQuantity) -> Result<f64> {
    let p = prepare(lam, q)?;
    check_constraint(&p, c)?;
    let n = p.n;
    let t: Vec<f64> = (0..n).map(|k| (0..n).map(|i| c.get(i, i, k)).sum()).collect();
    match q.kind {
        JacobiKind::LogLambdaMax => {
            let top = p.top;
            let a = p.v;
            let mut lap = 0.0;
            for i in 0..n {
                for j in 0..n {
                    lap += c.get(i, j, top).powi(2);
                }
            }
            lap -= t[top] * t[top];
            for k in 0..n {
                for j in (0..n).filter(|&j| j != top) {
                    lap += 2.0 * p.f[k] * c.get(top, j, k).powi(2) / (p.lam[top] - p.lam[j]);
                }
            }
            let grad: f64 = (0..n).map(|k| p.f[k] * c.get(top, top, k).powi(2)).sum::<f64>() / (a * a);
            Ok(lap / a - grad - p.kappa * grad)
        }
        _ => {
            let v = p.v;
            let grad: f64 = (0..n).map(|k| p.f[k] * t[k] * t[k]).sum::<f64>() / (v * v);
            let lap = trace_second_variation(c) / v - grad;
            Ok(lap - p.kappa * grad)
        }
    }
}

/// Linear functional on scaled coordinates: `(offset, weight)` pairs.
type Functional = Vec<(usize, f64)>;

struct Layout {
    n: usize,
    offsets: Vec<usize>,
    inv_sqrt_mult: Vec<f64>,
    len: usize,
}

impl Layout {
    fn new(n: usize) -> Self {
        let triples = Tensor3::index_triples(n);
        let mut offsets = vec![usize::MAX; n * n * n];
        let mut inv_sqrt_mult = Vec::with_capacity(triples.len());
        for (o, &(i, j, k)) in triples.iter().enumerate() {
            for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                offsets[(a * n + b) * n + c] = o;
            }
            inv_sqrt_mult.push(1.0 / (Tensor3::multiplicity(i, j, k) as f64).sqrt());
        }
        Self { n, offsets, inv_sqrt_mult, len: triples.len() }
    }

    /// The functional `x -> c_ijk`.
    fn entry(&self, i: usize, j: usize, k: usize) -> (usize, f64) {
        let o = self.offsets[(i * self.n + j) * self.n + k];
        (o, self.inv_sqrt_mult[o])
    }

    /// The functional `x -> sum_i w_i c_iik`.
    fn weighted_trace(&self, k: usize, w: &[f64]) -> Functional {
        (0..self.n).map(|i| {
            let (o, s) = self.entry(i, i, k);
            (o, s * w[i])
        })
        .collect()
    }
}

fn add_outer(q: &mut DMatrix<f64>, coef: f64, l: &Functional) {
    for &(a, wa) in l {
        for &(b, wb) in l {
            q[(a, b)] += coef * wa * wb;
        }
    }
}

/// Matrix `Q` with `G(c) = x^T Q x`, `x` the scaled coordinates of `c`.
fn assemble_form(p: &Point, q: &JacobiQuantity, layout: &Layout) -> DMatrix<f64> {
    let n = p.n;
    let mut m = DMatrix::zeros(layout.len, layout.len);
    let ones = vec![1.0; n];
    match q.kind {
        JacobiKind::LogLambdaMax => {
            let top = p.top;
            let a = p.v;
            for i in 0..n {
                for j in 0..n {
                    add_outer(&mut m, 1.0 / a, &vec![layout.entry(i, j, top)]);
                }
            }
            add_outer(&mut m, -1.0 / a, &layout.weighted_trace(top, &ones));
            for k in 0..n {
                for j in (0..n).filter(|&j| j != top) {
                    let coef = 2.0 * p.f[k] / (a * (p.lam[top] - p.lam[j]));
                    add_outer(&mut m, coef, &vec![layout.entry(top, j, k)]);
                }
                add_outer(&mut m, -(1.0 + p.kappa) * p.f[k] / (a * a), &vec![layout.entry(top, top, k)]);
            }
        }
        _ => {
            let v = p.v;
            for d in 0..layout.len {
                m[(d, d)] += 1.0 / v;
            }
            for k in 0..n {
                let coef = -(1.0 / v + (1.0 + p.kappa) * p.f[k] / (v * v));
                add_outer(&mut m, coef, &layout.weighted_trace(k, &ones));
            }
        }
    }
    m
}

/// Orthonormal basis (columns) of `{x : sum_i F_ii c_iik = 0 for all k}`.
fn constraint_null_basis(p: &Point, layout: &Layout) -> DMatrix<f64> {
    let dim = layout.len;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for k in 0..p.n {
        let mut row = DVector::zeros(dim);
        for (o, w) in layout.weighted_trace(k, &p.f) {
            row[o] += w;
        }
        orthogonalize(&mut row, &basis);
        let norm = row.norm();
        if norm > 1e-12 {
            basis.push(row / norm);
        }
    }
    let rank = basis.len();
    for e in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[e] = 1.0;
        orthogonalize(&mut v, &basis);
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    DMatrix::from_columns(&basis[rank..])
}

fn orthogonalize(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let d = b.dot(v);
            v.axpy(-d, b, 1.0);
        }
    }
}

/// Smallest eigenvalue of `B^T Q B` and the matching vector `B y`; zero on an empty subspace.
pub fn projected_min(q: &DMatrix<f64>, basis: &DMatrix<f64>) -> (f64, DVector<f64>) {
    if basis.ncols() == 0 {
        return (0.0, DVector::zeros(q.nrows()));
    }
    let r = basis.transpose() * q * basis;
    let r = (&r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::new(r);
    let (imin, &min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    (min, basis * eig.eigenvectors.column(imin))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub lambda: Spectrum,
    pub min_gap: f64,
    /// Unit Frobenius norm, admissible.
    pub minimizer: Tensor3,
    pub quantity: JacobiQuantity,
    pub kappa: f64,
}

/// Minimum of the gap over all admissible unit-norm third derivatives at `lam`.
pub fn certified_min_gap(lam: &Spectrum, q: &JacobiQuantity) -> Result<GapCertificate> {
    let p = prepare(lam, q)?;
    let layout = Layout::new(p.n);
    let form = assemble_form(&p, q, &layout);
    let basis = constraint_null_basis(&p, &layout);
    let (min_gap, x) = projected_min(&form, &basis);
    Ok(GapCertificate {
        lambda: lam.clone(),
        min_gap,
        minimizer: Tensor3::from_scaled_coords(p.n, &x)?,
        quantity: *q,
        kappa: p.kappa,
    })
}

/// Projects `c` onto the admissible subspace at `lam` (Frobenius-orthogonal projection).
pub fn project_admissible(lam: &Spectrum, c: &Tensor3) -> Result<Tensor3> {
    if c.n() != lam.n() {
        return domain("tensor and spectrum dimensions differ");
    }
    let t = lam.trace();
    let f: Vec<f64> = lam.values().iter().map(|l| t - l).collect();
    let layout = Layout::new(lam.n());
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for k in 0..lam.n() {
        let mut row = DVector::zeros(layout.len);
        for (o, w) in layout.weighted_trace(k, &f) {
            row[o] += w;
        }
        orthogonalize(&mut row, &rows);
        let norm = row.norm();
        if norm > 1e-12 {
            rows.push(row / norm);
        }
    }
    let mut x = c.to_scaled_coords();
    orthogonalize(&mut x, &rows);
    Tensor3::from_scaled_coords(lam.n(), &x)
}

/// `count` seeded pairs `(lambda, c)` with `lambda` on the positive branch,
/// `lambda_min >= -K + 1e-6`, and `c` a Gaussian tensor projected onto the constraints.
pub fn sample_admissible(n: usize, k: f64, seed: u64, count: usize) -> Result<Vec<(Spectrum, Tensor3)>> {
    if n < 3 {
        return domain(format!("sampling needs n >= 3, got {n}"));
    }
    if !(k >= 0.0) {
        return domain(format!("K must be nonnegative, got {k}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = Tensor3::independent_len(n);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let lam = sample_on_branch(&mut rng, n, Some(-k + SAMPLE_MARGIN), MAX_SAMPLE_ATTEMPTS)?;
        let x = DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));
        let c = project_admissible(&lam, &Tensor3::from_scaled_coords(n, &x)?)?;
        out.push((lam, c));
    }
    Ok(out)
}

/// Eigen-frame data of a Hessian: spectrum, eigenvectors (columns), and `D^3 u` rotated into that frame.
pub fn to_eigenframe(h: &SymMatrix, third: &Tensor3) -> Result<(Spectrum, DMatrix<f64>, Tensor3)> {
    let (vals, vecs) = h.eigen();
    let c = third.rotate(&vecs);
    Ok((Spectrum::new(vals)?, vecs, c))
}

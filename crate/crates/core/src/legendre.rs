//! Legendre–Lewy transform: `w` is the Legendre transform of
//! `v(x) = u(x) + K|x|^2/2`, so `D^2 w = (D^2 u + K)^{-1}` and `mu = 1/(lambda + K)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::jacobi::{jacobi_gap, JacobiQuantity};
use crate::spectrum::{elementary_symmetric, spectrum_sigma, Spectrum, SymMatrix};
use crate::tensor::Tensor3;
use crate::zoo::{zoo_eval, ClosedFormSolution};

/// Vertical eigenvalues `mu_i = 1/(lambda_i + K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalPoint {
    pub mu: Spectrum,
    pub k: f64,
    /// `min(lambda) + K = 1 / max(mu)`.
    pub delta: f64,
}

impl VerticalPoint {
    pub fn new(mu: Spectrum, k: f64) -> Result<Self> {
        if let Some(m) = mu.values().iter().find(|m| !(**m > 0.0)) {
            return domain(format!("vertical eigenvalues must be positive, got {m}"));
        }
        if !k.is_finite() || k < 0.0 {
            return domain(format!("shift K must be nonnegative, got {k}"));
        }
        let delta = 1.0 / mu.max();
        Ok(Self { mu, k, delta })
    }

    pub fn from_lambda(lam: &Spectrum, k: f64) -> Result<Self> {
        let lmin = lam.min();
        if !(lmin + k > 0.0) {
            return Err(Error::Semiconvexity { lambda_min: lmin, margin: lmin + k });
        }
        Self::new(Spectrum::new(lam.values().iter().map(|l| 1.0 / (l + k)).collect())?, k)
    }

    /// `lambda_i = 1/mu_i - K`.
    pub fn lambda(&self) -> Vec<f64> {
        self.mu.values().iter().map(|m| 1.0 / m - self.k).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PointTransform {
    /// `(H + K I)^{-1}`.
    pub m: SymMatrix,
    /// Eigenvalues paired with the ascending eigenvalues of `H`.
    pub vertical: VerticalPoint,
    pub eigenvectors: DMatrix<f64>,
}

pub fn ll_point_transform(h: &SymMatrix, k: f64) -> Result<PointTransform> {
    if !k.is_finite() || k < 0.0 {
        return domain(format!("shift K must be nonnegative, got {k}"));
    }
    let (vals, vecs) = h.eigen();
    let lam = Spectrum::new(vals)?;
    let vertical = VerticalPoint::from_lambda(&lam, k)?;
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(vertical.mu.values()));
    let m = SymMatrix::new(&vecs * d * vecs.transpose())?;
    Ok(PointTransform { m, vertical, eigenvectors: vecs })
}

/// `H = M^{-1} - K I` for positive definite `M`.
pub fn ll_point_inverse(m: &SymMatrix, k: f64) -> Result<SymMatrix> {
    let chol = m
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("vertical Hessian must be positive definite".into()))?;
    let n = m.n();
    SymMatrix::new(chol.inverse() - DMatrix::identity(n, n) * k)
}

/// A residual with the sum of the magnitudes of its terms, for relative comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub value: f64,
    pub scale: f64,
}

impl Residual {
    pub fn relative(&self) -> f64 {
        self.value.abs() / self.scale.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalResiduals {
    /// `1 - sigma_2(mu^{-1} - K)`.
    pub enue: Residual,
    /// `sigma_{n-2}/sigma_n - (n-1) K sigma_{n-1}/sigma_n + n(n-1)K^2/2 - 1`.
    pub ratio_form: Residual,
    /// `-sigma_1 + 2K sigma_2 - (3K^2 - 1) sigma_3` (`n = 3`).
    pub poly3: Option<Residual>,
    /// `sigma_{n-1}/sigma_{n-2} - 1/((n-1)K)` when `K = sqrt(2/(n(n-1)))`.
    pub enc: Option<Residual>,
}

impl VerticalResiduals {
    pub fn max_relative(&self) -> f64 {
        [Some(self.enue), Some(self.ratio_form), self.poly3, self.enc].iter().flatten().map(|r| r.relative()).fold(0.0, f64::max)
    }
}

/// The almost-convex shift `sqrt(2/(n(n-1)))`.
pub fn almost_convex_shift(n: usize) -> f64 {
    (2.0 / (n * (n - 1)) as f64).sqrt()
}

pub fn vertical_residuals(v: &VerticalPoint) -> Result<VerticalResiduals> {
    let mu = v.mu.values();
    let n = mu.len();
    let k = v.k;
    let nf = n as f64;
    let lam = v.lambda();
    let s2 = elementary_symmetric(&lam, 2)[2];
    let abs_s2 = 0.5 * lam.iter().map(|l| l.abs()).sum::<f64>().powi(2);
    let enue = Residual { value: 1.0 - s2, scale: 1.0 + abs_s2 };

    let e = elementary_symmetric(mu, n);
    let t1 = e[n - 2] / e[n];
    let t2 = (nf - 1.0) * k * e[n - 1] / e[n];
    let t3 = nf * (nf - 1.0) * k * k / 2.0;
    let ratio_form = Residual { value: t1 - t2 + t3 - 1.0, scale: t1.abs() + t2.abs() + t3 + 1.0 };

    let poly3 = (n == 3).then(|| {
        let (a, b, c) = (e[1], 2.0 * k * e[2], (3.0 * k * k - 1.0) * e[3]);
        Residual { value: -a + b - c, scale: a.abs() + b.abs() + c.abs() }
    });
    let enc = (k > 0.0 && (k - almost_convex_shift(n)).abs() <= 1e-12).then(|| {
        let r = e[n - 1] / e[n - 2];
        let c = 1.0 / ((nf - 1.0) * k);
        Residual { value: r - c, scale: r.abs() + c }
    });
    Ok(VerticalResiduals { enue, ratio_form, poly3, enc })
}

/// `a = sigma_n(mu) / sigma_{n-1}(mu)`, which equals `1 / sum(1/mu_i)`.
pub fn superharmonic_quantity(v: &VerticalPoint) -> Result<f64> {
    let n = v.mu.n();
    let e = elementary_symmetric(v.mu.values(), n);
    if e[n - 1] == 0.0 {
        return domain("sigma_{n-1}(mu) vanishes");
    }
    Ok(e[n] / e[n - 1])
}

/// `c'_abc = -mu_a mu_b mu_c c_abc`: the third derivatives of `w` in the common eigenbasis.
pub fn third_order_pushforward(lam: &Spectrum, c: &Tensor3, k: f64) -> Result<Tensor3> {
    let v = VerticalPoint::from_lambda(lam, k)?;
    if c.n() != lam.n() {
        return domain("tensor and spectrum dimensions differ");
    }
    let mu = v.mu.values();
    let mut out = Tensor3::zeros(c.n());
    for (a, b, cc) in Tensor3::index_triples(c.n()) {
        out.set(a, b, cc, -mu[a] * mu[b] * mu[cc] * c.get(a, b, cc));
    }
    Ok(out)
}

/// Vertical operator `H(M) = det(M) (1 - sigma_2(M^{-1} - K))` with its
/// first and second directional derivatives at a fixed `M`.
struct VerticalOperator {
    minv: DMatrix<f64>,
    det: f64,
    s: f64,
    /// `tr(N) I - N`, `N = M^{-1} - K`.
    f_n: DMatrix<f64>,
}

fn tr(a: &DMatrix<f64>) -> f64 {
    a.trace()
}

impl VerticalOperator {
    fn new(m: &DMatrix<f64>, k: f64) -> Result<Self> {
        let n = m.nrows();
        let minv = m.clone().try_inverse().ok_or_else(|| Error::Domain("singular vertical Hessian".into()))?;
        let nn = &minv - DMatrix::identity(n, n) * k;
        let s = 0.5 * (tr(&nn).powi(2) - nn.iter().map(|v| v * v).sum::<f64>());
        let f_n = DMatrix::identity(n, n) * tr(&nn) - &nn;
        Ok(Self { det: m.determinant(), minv, s, f_n })
    }

    fn dn(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        -(&self.minv * x * &self.minv)
    }

    fn ds(&self, x: &DMatrix<f64>) -> f64 {
        tr(&(&self.f_n * self.dn(x)))
    }

    fn d2s(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let (zx, zy) = (self.dn(x), self.dn(y));
        let d2n = &self.minv * x * &self.minv * y * &self.minv + &self.minv * y * &self.minv * x * &self.minv;
        tr(&zx) * tr(&zy) - tr(&(&zx * &zy)) + tr(&(&self.f_n * d2n))
    }

    fn ddet(&self, x: &DMatrix<f64>) -> f64 {
        self.det * tr(&(&self.minv * x))
    }

    fn d2det(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let (ax, ay) = (&self.minv * x, &self.minv * y);
        self.det * (tr(&ax) * tr(&ay) - tr(&(&ax * &ay)))
    }

    /// `dH/dM` as a matrix.
    fn gradient(&self) -> DMatrix<f64> {
        let n = self.minv.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            let e = unit(n, i, j);
            self.ddet(&e) * (1.0 - self.s) - self.det * self.ds(&e)
        })
    }

    fn d2h(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        self.d2det(x, y) * (1.0 - self.s) - self.ddet(x) * self.ds(y) - self.ddet(y) * self.ds(x) - self.det * self.d2s(x, y)
    }
}

/// Symmetric unit direction with `E_ij = E_ji = 1/2` off the diagonal, so
/// that `sum_ij G_ij X_ij` is recovered by contraction with the gradient.
fn unit(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    if i == j {
        e[(i, i)] = 1.0;
    } else {
        e[(i, j)] = 0.5;
        e[(j, i)] = 0.5;
    }
    e
}

/// `A(M) = 1 / tr(M^{-1})`, the superharmonic quantity as a function of `D^2 w`.
struct TraceInverse {
    minv: DMatrix<f64>,
    t: f64,
}

impl TraceInverse {
    fn dt(&self, x: &DMatrix<f64>) -> f64 {
        -tr(&(&self.minv * x * &self.minv))
    }

    fn d2t(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let m = &self.minv;
        tr(&(m * x * m * y * m)) + tr(&(m * y * m * x * m))
    }

    fn gradient(&self) -> DMatrix<f64> {
        &self.minv * &self.minv / (self.t * self.t)
    }

    fn d2a(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        2.0 * self.dt(x) * self.dt(y) / self.t.powi(3) - self.d2t(x, y) / (self.t * self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformationRule {
    /// `Delta_F b - |grad_F b|^2` for `b = ln(trace + nK)`.
    pub horizontal_gap: f64,
    /// `Delta_H a` at `(mu, c')`, fourth derivatives eliminated.
    pub vertical_value: f64,
    pub sign_consistent: bool,
    /// `vertical_value / horizontal_gap` when the gap is nonzero.
    pub factor: Option<f64>,
    /// `-sigma_n(mu) a`, the exact proportionality constant.
    pub predicted_factor: f64,
    /// `|sigma_n/sigma_{n-1} - 1/sum(lambda + K)| / a`.
    pub a_identity_err: f64,
    /// `max_k |sum_pq H^pq c'_pqk|` relative to its terms.
    pub vertical_constraint: f64,
}

/// Compares the horizontal shifted-trace Jacobi gap with the vertical `Delta_H a`.
pub fn transformation_rule_check(lam: &Spectrum, c: &Tensor3, k: f64) -> Result<TransformationRule> {
    let q = JacobiQuantity::shifted_trace(k);
    let horizontal_gap = jacobi_gap(lam, c, &q)?;
    let v = VerticalPoint::from_lambda(lam, k)?;
    let n = lam.n();
    let mu = v.mu.values();
    let cp = third_order_pushforward(lam, c, k)?;
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(mu));
    let op = VerticalOperator::new(&m, k)?;
    let ti = TraceInverse { minv: op.minv.clone(), t: tr(&op.minv) };
    let slices: Vec<DMatrix<f64>> = (0..n).map(|p| cp.slice(p)).collect();
    let gh = op.gradient();
    let ga = ti.gradient();

    let mut first = 0.0;
    let mut first_abs = 0.0;
    let mut second = 0.0;
    let mut second_abs = 0.0;
    for p in 0..n {
        for qq in 0..n {
            let t = gh[(p, qq)] * ti.d2a(&slices[p], &slices[qq]);
            first += t;
            first_abs += t.abs();
            // Delta_H w_pq = -d^2H[C_p, C_q] by the twice-differentiated vertical equation.
            let s = -ga[(p, qq)] * op.d2h(&slices[p], &slices[qq]);
            second += s;
            second_abs += s.abs();
        }
    }
    let vertical_value = first + second;

    let mut vertical_constraint: f64 = 0.0;
    for kk in 0..n {
        let terms: Vec<f64> = (0..n).flat_map(|p| (0..n).map(move |r| (p, r))).map(|(p, r)| gh[(p, r)] * cp.get(p, r, kk)).collect();
        let mag: f64 = terms.iter().map(|t| t.abs()).sum();
        if mag > 0.0 {
            vertical_constraint = vertical_constraint.max(terms.iter().sum::<f64>().abs() / mag);
        }
    }

    let a = superharmonic_quantity(&v)?;
    let direct_a = 1.0 / lam.values().iter().map(|l| l + k).sum::<f64>();
    let sigma_n = spectrum_sigma(&v.mu, n)?;
    let shift = lam.trace() + n as f64 * k;
    let tol_h = 1e-9 * c.frobenius_sq() / shift;
    let tol_v = 1e-9 * (first_abs + second_abs);
    Ok(TransformationRule {
        horizontal_gap,
        vertical_value,
        sign_consistent: (horizontal_gap >= -tol_h) == (vertical_value <= tol_v),
        factor: (horizontal_gap != 0.0).then(|| vertical_value / horizontal_gap),
        predicted_factor: -sigma_n * a,
        a_identity_err: (a - direct_a).abs() / a,
        vertical_constraint,
    })
}

/// A convex potential on a box, queried by the transform.
pub trait ConvexSource: Sync {
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Hessian (possibly approximate; used only for Newton steps).
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    fn dim(&self) -> usize {
        self.lower().len()
    }
}

/// `u + K|x|^2/2` for a closed-form `u`.
pub struct ClosedFormPotential {
    solution: ClosedFormSolution,
    k: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ClosedFormPotential {
    pub fn new(solution: ClosedFormSolution, k: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = solution.dim();
        if lower.len() != n || upper.len() != n || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return domain("box does not match the solution dimension");
        }
        Ok(Self { solution, k, lower, upper })
    }
}

impl ConvexSource for ClosedFormPotential {
    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn value(&self, x: &[f64]) -> f64 {
        let u = zoo_eval(&self.solution, x, 0).map_or(f64::NAN, |d| d.value);
        u + 0.5 * self.k * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match zoo_eval(&self.solution, x, 1) {
            Ok(d) => d.gradient.expect("order 1").iter().zip(x).map(|(g, xi)| g + self.k * xi).collect(),
            Err(_) => vec![f64::NAN; x.len()],
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        match zoo_eval(&self.solution, x, 2) {
            Ok(d) => d.hessian.expect("order 2").into_matrix() + DMatrix::identity(n, n) * self.k,
            Err(_) => DMatrix::from_element(n, n, f64::NAN),
        }
    }
}

/// `u + K|x|^2/2` from grid samples: tensor-product cubic interpolation of the
/// values and of fourth-order nodal gradients; nodal second differences for Newton.
pub struct GridPotential {
    v: GridField,
    grads: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl GridPotential {
    pub fn new(u: &GridField, k: f64) -> Result<Self> {
        let spec = u.spec.clone();
        if spec.shape.iter().any(|&s| s < 5) {
            return Err(Error::Resolution("grid potentials need at least 5 nodes per axis".into()));
        }
        let v = GridField::from_fn(spec.clone(), |x| 0.5 * k * x.iter().map(|c| c * c).sum::<f64>());
        let v = GridField { spec: spec.clone(), values: v.values.iter().zip(&u.values).map(|(q, u)| q + u).collect() };
        let grads: Vec<f64> = (0..spec.len()).into_par_iter().flat_map_iter(|i| v.gradient4(i)).collect();
        Ok(Self { lower: spec.origin.clone(), upper: spec.upper(), v, grads })
    }

    pub fn field(&self) -> &GridField {
        &self.v
    }

    pub fn nodal_gradient(&self, flat: usize) -> &[f64] {
        let n = self.v.dim();
        &self.grads[flat * n..(flat + 1) * n]
    }

    /// Start node and Lagrange weights per axis.
    fn stencil(&self, x: &[f64]) -> Vec<(usize, [f64; 4])> {
        let s = &self.v.spec;
        (0..s.dim())
            .map(|a| {
                let m = s.shape[a];
                let t = (x[a] - s.origin[a]) / s.spacing[a];
                let cell = (t.floor().max(0.0) as usize).min(m - 2);
                let start = cell.saturating_sub(1).min(m - 4);
                let tau = t - start as f64;
                let w = [
                    -(tau - 1.0) * (tau - 2.0) * (tau - 3.0) / 6.0,
                    tau * (tau - 2.0) * (tau - 3.0) / 2.0,
                    -tau * (tau - 1.0) * (tau - 3.0) / 2.0,
                    tau * (tau - 1.0) * (tau - 2.0) / 6.0,
                ];
                (start, w)
            })
            .collect()
    }

    fn interpolate(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) {
        let st = self.stencil(x);
        let n = st.len();
        let spec = &self.v.spec;
        let mut idx = vec![0usize; n];
        for combo in 0..4usize.pow(n as u32) {
            let mut c = combo;
            let mut w = 1.0;
            for a in (0..n).rev() {
                let o = c % 4;
                c /= 4;
                idx[a] = st[a].0 + o;
                w *= st[a].1[o];
            }
            visit(spec.flat(&idx), w);
        }
    }
}

impl ConvexSource for GridPotential {
    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        self.interpolate(x, |f, w| s += w * self.v.values[f]);
        s
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut g = vec![0.0; n];
        self.interpolate(x, |f, w| {
            for (a, ga) in g.iter_mut().enumerate() {
                *ga += w * self.grads[f * n + a];
            }
        });
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let s = &self.v.spec;
        let idx: Vec<usize> = (0..s.dim())
            .map(|a| (((x[a] - s.origin[a]) / s.spacing[a]).round().max(1.0) as usize).min(s.shape[a] - 2))
            .collect();
        self.v.hessian(s.flat(&idx))
    }
}

/// Maximizer of `x.y - v(x)` over the box by projected Newton on `grad v(x) = y`.
/// Returns the maximizer, whether it is interior to the gradient image, and convergence.
fn invert_gradient(src: &dyn ConvexSource, y: &[f64], x0: &[f64]) -> (Vec<f64>, bool, bool) {
    let n = y.len();
    let (lo, hi) = (src.lower(), src.upper());
    let clamp = |x: &mut [f64]| {
        for a in 0..n {
            x[a] = x[a].clamp(lo[a], hi[a]);
        }
    };
    let ynorm = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-13 * ynorm;
    let mut x = x0.to_vec();
    clamp(&mut x);
    // Free coordinates: not pinned at a bound by an outward-pointing residual.
    let free_of = |x: &[f64], r: &[f64]| -> Vec<bool> {
        (0..n).map(|a| !((x[a] <= lo[a] && r[a] > 0.0) || (x[a] >= hi[a] && r[a] < 0.0))).collect()
    };
    let merit = |r: &[f64], free: &[bool]| (0..n).filter(|&a| free[a]).map(|a| r[a].abs()).fold(0.0, f64::max);
    let mut r: Vec<f64> = src.gradient(&x).iter().zip(y).map(|(g, y)| g - y).collect();
    for _ in 0..100 {
        let free = free_of(&x, &r);
        let m0 = merit(&r, &free);
        if m0 <= tol {
            return (x, free.iter().all(|&f| f), true);
        }
        let fi: Vec<usize> = (0..n).filter(|&a| free[a]).collect();
        let h = src.hessian(&x);
        let hf = DMatrix::from_fn(fi.len(), fi.len(), |i, j| h[(fi[i], fi[j])]);
        let ridge = 1e-12 * (1.0 + hf.amax());
        let hf = hf + DMatrix::identity(fi.len(), fi.len()) * ridge;
        let rhs = DVector::from_iterator(fi.len(), fi.iter().map(|&a| -r[a]));
        let d = match hf.lu().solve(&rhs) {
            Some(d) => d,
            None => rhs,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut xn = x.clone();
            for (i, &a) in fi.iter().enumerate() {
                xn[a] += t * d[i];
            }
            clamp(&mut xn);
            let rn: Vec<f64> = src.gradient(&xn).iter().zip(y).map(|(g, y)| g - y).collect();
            let fnew = free_of(&xn, &rn);
            if merit(&rn, &fnew) < m0 {
                x = xn;
                r = rn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            let free = free_of(&x, &r);
            return (x, free.iter().all(|&f| f), merit(&r, &free) <= 1e-9 * ynorm);
        }
    }
    let free = free_of(&x, &r);
    (x.clone(), free.iter().all(|&f| f), merit(&r, &free) <= tol)
}

#[derive(Debug, Clone)]
pub struct TransformedGrid {
    pub w: GridField,
    /// Nodes whose maximizer is interior (the node lies in the gradient image).
    pub inside: Vec<bool>,
    pub converged: Vec<bool>,
    pub unconverged: usize,
}

/// Discrete Legendre transform `w(y) = sup_x (x.y - v(x))` sampled on `y_spec`.
/// Lines along the last axis are swept with continuation, in parallel.
pub fn legendre_transform(src: &dyn ConvexSource, y_spec: &GridSpec) -> Result<TransformedGrid> {
    let n = src.dim();
    if y_spec.dim() != n {
        return domain("target grid dimension differs from the source");
    }
    let last = n - 1;
    let line_len = y_spec.shape[last];
    let lines = y_spec.len() / line_len;
    let center: Vec<f64> = (0..n).map(|a| 0.5 * (src.lower()[a] + src.upper()[a])).collect();
    let gc = src.gradient(&center);
    let hc = src.hessian(&center);
    let hc_lu = hc.lu();
    let solved: Vec<Vec<(f64, bool, bool)>> = (0..lines)
        .into_par_iter()
        .map(|line| {
            let mut out = Vec::with_capacity(line_len);
            let mut prev: Option<Vec<f64>> = None;
            for j in 0..line_len {
                let flat = line * line_len + j;
                let y = y_spec.coord(flat);
                let x0 = prev.clone().unwrap_or_else(|| {
                    let rhs = DVector::from_iterator(n, (0..n).map(|a| y[a] - gc[a]));
                    match hc_lu.solve(&rhs) {
                        Some(d) => (0..n).map(|a| center[a] + d[a]).collect(),
                        None => center.clone(),
                    }
                });
                let (x, inside, ok) = invert_gradient(src, &y, &x0);
                let w = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - src.value(&x);
                out.push((w, inside, ok));
                prev = Some(x);
            }
            out
        })
        .collect();
    let flat: Vec<(f64, bool, bool)> = solved.into_iter().flatten().collect();
    let unconverged = flat.iter().filter(|t| !t.2).count();
    let w = GridField::new(y_spec.clone(), flat.iter().map(|t| t.0).collect())?;
    Ok(TransformedGrid { w, inside: flat.iter().map(|t| t.1).collect(), converged: flat.iter().map(|t| t.2).collect(), unconverged })
}

#[derive(Debug, Clone)]
pub struct GridTransform {
    pub w: GridField,
    pub inside: Vec<bool>,
    /// Max node error of `v` after transforming `w` back, over nodes whose gradient
    /// lands where the interpolant of `w` only sees nodes inside the gradient image.
    pub roundtrip_err: f64,
    pub unconverged: usize,
}

/// Legendre–Lewy transform of grid samples on the bounding box of the discrete gradient image.
pub fn ll_grid_transform(u: &GridField, k: f64) -> Result<GridTransform> {
    if !k.is_finite() || k < 0.0 {
        return domain(format!("shift K must be nonnegative, got {k}"));
    }
    let spec = &u.spec;
    let n = spec.dim();
    let bad = spec.interior_nodes().into_par_iter().find_first(|&f| {
        let h = u.hessian(f) + DMatrix::identity(n, n) * k;
        nalgebra::SymmetricEigen::new(h).eigenvalues.min() <= 0.0
    });
    if let Some(f) = bad {
        let h = u.hessian(f) + DMatrix::identity(n, n) * k;
        let min_eig = nalgebra::SymmetricEigen::new(h).eigenvalues.min();
        return Err(Error::Convexity { node: spec.multi(f), min_eig });
    }
    let src = GridPotential::new(u, k)?;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for f in 0..spec.len() {
        for (a, g) in src.nodal_gradient(f).iter().enumerate() {
            lo[a] = lo[a].min(*g);
            hi[a] = hi[a].max(*g);
        }
    }
    let spacing: Vec<f64> = (0..n).map(|a| (hi[a] - lo[a]) / (spec.shape[a] - 1) as f64).collect();
    if spacing.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Convexity { node: vec![], min_eig: 0.0 });
    }
    let y_spec = GridSpec::new(spec.shape.clone(), lo, spacing)?;
    let fwd = legendre_transform(&src, &y_spec)?;
    let back_src = GridPotential::new(&fwd.w, 0.0)?;
    let back = legendre_transform(&back_src, spec)?;
    let covered = |f: usize| {
        let y = src.nodal_gradient(f);
        let mut idx = vec![0usize; n];
        for a in 0..n {
            let c = ((y[a] - y_spec.origin[a]) / y_spec.spacing[a]).floor() as isize;
            if c < 1 || c + 2 >= y_spec.shape[a] as isize {
                return false;
            }
            idx[a] = c as usize - 1;
        }
        (0..4usize.pow(n as u32)).all(|m| {
            let node: Vec<usize> = (0..n).map(|a| idx[a] + (m / 4usize.pow(a as u32)) % 4).collect();
            fwd.inside[y_spec.flat(&node)]
        })
    };
    let checked: Vec<usize> = (0..spec.len()).filter(|&f| back.converged[f] && covered(f)).collect();
    let roundtrip_err = checked.iter().map(|&f| (back.w.values[f] - src.field().values[f]).abs()).fold(0.0, f64::max);
    Ok(GridTransform { w: fwd.w, inside: fwd.inside, roundtrip_err, unconverged: fwd.unconverged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifferenceOrder {
    /// Stencils reaching two nodes out.
    Second,
    /// Stencils reaching three nodes out.
    Fourth,
}

/// Central stencil `(offset, weight)` for the `m`-th derivative, without the `h^-m` factor.
fn stencil(m: usize, order: DifferenceOrder) -> Vec<(isize, f64)> {
    use DifferenceOrder::*;
    match (m, order) {
        (0, _) => vec![(0, 1.0)],
        (1, Second) => vec![(-1, -0.5), (1, 0.5)],
        (2, Second) => vec![(-1, 1.0), (0, -2.0), (1, 1.0)],
        (3, Second) => vec![(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        (1, Fourth) => vec![(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)],
        (2, Fourth) => vec![(-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0)],
        (3, Fourth) => vec![(-3, 1.0 / 8.0), (-2, -1.0), (-1, 13.0 / 8.0), (1, -13.0 / 8.0), (2, 1.0), (3, -1.0 / 8.0)],
        _ => unreachable!("third differences use derivative orders up to 3"),
    }
}

/// Central third differences of a grid field: tensor products of one-dimensional stencils.
pub fn third_differences(w: &GridField, flat: usize, order: DifferenceOrder) -> Result<Tensor3> {
    let s = &w.spec;
    let reach = match order {
        DifferenceOrder::Second => 2,
        DifferenceOrder::Fourth => 3,
    };
    if s.depth(flat) < reach {
        return domain(format!("third differences need {reach} layers of neighbours"));
    }
    let n = s.dim();
    let mut t = Tensor3::zeros(n);
    for (a, b, c) in Tensor3::index_triples(n) {
        let mut m = vec![0usize; n];
        for ax in [a, b, c] {
            m[ax] += 1;
        }
        let axes: Vec<usize> = (0..n).filter(|&ax| m[ax] > 0).collect();
        let stencils: Vec<Vec<(isize, f64)>> = axes.iter().map(|&ax| stencil(m[ax], order)).collect();
        let scale: f64 = axes.iter().map(|&ax| s.spacing[ax].powi(m[ax] as i32)).product();
        let mut acc = 0.0;
        let mut idx = vec![0usize; axes.len()];
        loop {
            let mut f = flat as isize;
            let mut weight = 1.0;
            for (k, &ax) in axes.iter().enumerate() {
                let (o, wgt) = stencils[k][idx[k]];
                f += o * s.stride(ax) as isize;
                weight *= wgt;
            }
            acc += weight * w.values[f as usize];
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < stencils[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
        t.set(a, b, c, acc / scale);
    }
    Ok(t)
}

/// Third derivatives of the transform of `src` at `y0 = grad v(x0)`, from fourth-order
/// third differences of `w` sampled on a `7^n` grid of spacing `h` centred at `y0`.
pub fn pushforward_by_differences(src: &dyn ConvexSource, x0: &[f64], h: f64) -> Result<Tensor3> {
    let n = src.dim();
    let y0 = src.gradient(x0);
    let spec = GridSpec::new(vec![7; n], y0.iter().map(|y| y - 3.0 * h).collect(), vec![h; n])?;
    let t = legendre_transform(src, &spec)?;
    if t.unconverged > 0 || !t.inside.iter().all(|&i| i) {
        return Err(Error::Resolution("local transform grid leaves the gradient image".into()));
    }
    third_differences(&t.w, spec.flat(&vec![3; n]), DifferenceOrder::Fourth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobi::sample_admissible;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sp(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    #[test]
    fn point_transform_examples() {
        let t = ll_point_transform(&SymMatrix::from_diagonal(&[2.0, 2.0, -0.75]), 1.0).unwrap();
        let mut mu = t.vertical.mu.values().to_vec();
        mu.sort_by(f64::total_cmp);
        assert!((mu[0] - 1.0 / 3.0).abs() < 1e-15 && (mu[2] - 4.0).abs() < 1e-14);
        assert!((t.vertical.delta - 0.25).abs() < 1e-15);
        let t = ll_point_transform(&SymMatrix::from_diagonal(&[1.0, 1.0, 0.0]), 1.0).unwrap();
        assert!((t.m.matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 1.0]))).amax() < 1e-15);
        let r = ll_point_transform(&SymMatrix::from_diagonal(&[-2.0, 1.0, 3.0]), 1.0);
        assert!(matches!(r, Err(Error::Semiconvexity { lambda_min, .. }) if lambda_min == -2.0));
    }

    #[test]
    fn residual_examples() {
        let v = VerticalPoint::new(sp(&[1.0 / 3.0, 1.0 / 3.0, 4.0]), 1.0).unwrap();
        assert!(vertical_residuals(&v).unwrap().poly3.unwrap().value.abs() < 1e-12);
        let v = VerticalPoint::new(sp(&[0.5, 0.5, 1.0]), 1.0).unwrap();
        let r = vertical_residuals(&v).unwrap();
        assert!(r.enue.value.abs() < 1e-15);
        assert!(r.enc.is_none());
        let k = almost_convex_shift(3);
        assert!((k - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let v = VerticalPoint::from_lambda(&sp(&[1.0, 1.0, 0.0]), k).unwrap();
        assert!(vertical_residuals(&v).unwrap().enc.unwrap().value.abs() < 1e-10);
        assert!(VerticalPoint::new(sp(&[1.0, -1.0]), 1.0).is_err());
    }

    #[test]
    fn superharmonic_examples() {
        let a = |m: &[f64]| superharmonic_quantity(&VerticalPoint::new(sp(m), 1.0).unwrap()).unwrap();
        assert!((a(&[1.0 / 3.0, 1.0 / 3.0, 4.0]) - 0.16).abs() < 1e-15);
        assert!((a(&[1.0; 5]) - 0.2).abs() < 1e-15);
        assert!((a(&[0.5, 0.5, 1.0]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pushforward_examples() {
        let lam = sp(&[1.0, 1.0, 0.0]);
        assert_eq!(third_order_pushforward(&lam, &Tensor3::zeros(3), 1.0).unwrap().max_abs(), 0.0);
        let mut c = Tensor3::zeros(3);
        c.set(0, 0, 2, 1.0);
        assert_eq!(third_order_pushforward(&lam, &c, 1.0).unwrap().get(0, 2, 0), -0.25);
    }

    #[test]
    fn transformation_rule_examples() {
        let lam = sp(&[1.0, 1.0, 0.0]);
        let r = transformation_rule_check(&lam, &Tensor3::zeros(3), 1.0).unwrap();
        assert_eq!((r.horizontal_gap, r.vertical_value), (0.0, 0.0));
        assert!(r.sign_consistent);
        let mut c = Tensor3::zeros(3);
        c.set(0, 0, 2, 1.0);
        c.set(1, 1, 2, 1.0);
        c.set(2, 2, 2, -1.0);
        let r = transformation_rule_check(&lam, &c, 1.0).unwrap();
        assert!(r.horizontal_gap > 0.0 && r.vertical_value <= 0.0);
        assert!(r.sign_consistent);
        assert!(r.a_identity_err < 1e-12);
        assert!(r.vertical_constraint < 1e-12);
        assert!((r.factor.unwrap() / r.predicted_factor - 1.0).abs() < 1e-10);
    }

    #[test]
    fn vertical_derivatives_match_finite_differences() {
        let m = DMatrix::from_row_slice(3, 3, &[0.7, 0.1, 0.0, 0.1, 0.4, 0.05, 0.0, 0.05, 1.3]);
        let op = VerticalOperator::new(&m, 1.0).unwrap();
        let x = DMatrix::from_row_slice(3, 3, &[0.3, -0.2, 0.1, -0.2, 0.5, 0.0, 0.1, 0.0, -0.4]);
        let y = DMatrix::from_row_slice(3, 3, &[-0.1, 0.2, 0.3, 0.2, 0.1, -0.3, 0.3, -0.3, 0.2]);
        let hval = |m: &DMatrix<f64>| {
            let o = VerticalOperator::new(m, 1.0).unwrap();
            o.det * (1.0 - o.s)
        };
        let e = 1e-4;
        let fd = (hval(&(&m + &x * e + &y * e)) - hval(&(&m + &x * e - &y * e)) - hval(&(&m - &x * e + &y * e))
            + hval(&(&m - &x * e - &y * e)))
            / (4.0 * e * e);
        assert!((fd - op.d2h(&x, &y)).abs() < 1e-6, "{fd} vs {}", op.d2h(&x, &y));
        let g = op.gradient();
        let first = (hval(&(&m + &x * e)) - hval(&(&m - &x * e))) / (2.0 * e);
        assert!((first - g.component_mul(&x).sum()).abs() < 1e-7);
        let ti = TraceInverse { minv: op.minv.clone(), t: tr(&op.minv) };
        let aval = |m: &DMatrix<f64>| 1.0 / tr(&m.clone().try_inverse().unwrap());
        let fd = (aval(&(&m + &x * e + &y * e)) - aval(&(&m + &x * e - &y * e)) - aval(&(&m - &x * e + &y * e))
            + aval(&(&m - &x * e - &y * e)))
            / (4.0 * e * e);
        assert!((fd - ti.d2a(&x, &y)).abs() < 1e-6);
        let first = (aval(&(&m + &x * e)) - aval(&(&m - &x * e))) / (2.0 * e);
        assert!((first - ti.gradient().component_mul(&x).sum()).abs() < 1e-8);
    }

    #[test]
    fn quadratic_grid_transform() {
        let spec = GridSpec::cube(3, -1.0, 1.0, 0.125).unwrap();
        let u = GridField::from_fn(spec, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let t = ll_grid_transform(&u, 1.0).unwrap();
        assert_eq!(t.unconverged, 0);
        let err = (0..t.w.spec.len())
            .map(|f| {
                let y = t.w.spec.coord(f);
                (t.w.values[f] - (y[0] * y[0] / 4.0 + y[1] * y[1] / 4.0 + y[2] * y[2] / 2.0)).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        assert!(t.roundtrip_err < 1e-10);
    }

    #[test]
    fn saddle_quadratic_recovers_vertical_hessian() {
        let spec = GridSpec::cube(3, -1.0, 1.0, 0.125).unwrap();
        let u = GridField::from_fn(spec, |x| x[0] * x[0] + x[1] * x[1] - 0.375 * x[2] * x[2]);
        let t = ll_grid_transform(&u, 1.0).unwrap();
        let f = t.w.spec.flat(&[8, 8, 8]);
        let h = t.w.hessian(f);
        for (a, e) in [1.0 / 3.0, 1.0 / 3.0, 4.0].iter().enumerate() {
            assert!((h[(a, a)] - e).abs() < 1e-8, "{}", h[(a, a)]);
        }
    }

    #[test]
    fn nonconvex_grid_rejected() {
        let spec = GridSpec::cube(2, -1.0, 1.0, 0.25).unwrap();
        let u = GridField::from_fn(spec, |x| x[0] * x[0] - 1.5 * x[1] * x[1]);
        assert!(matches!(ll_grid_transform(&u, 1.0), Err(Error::Convexity { .. })));
    }

    #[test]
    fn third_differences_are_exact_on_cubics() {
        let spec = GridSpec::cube(3, -1.0, 1.0, 0.125).unwrap();
        let w = GridField::from_fn(spec.clone(), |x| x[0].powi(3) - 2.0 * x[0] * x[1] * x[2] + 0.5 * x[1] * x[1] * x[2] + x[2] * x[2]);
        let f = spec.flat(&[8, 8, 8]);
        for order in [DifferenceOrder::Second, DifferenceOrder::Fourth] {
            let t = third_differences(&w, f, order).unwrap();
            assert!((t.get(0, 0, 0) - 6.0).abs() < 1e-9);
            assert!((t.get(0, 1, 2) + 2.0).abs() < 1e-9);
            assert!((t.get(1, 1, 2) - 1.0).abs() < 1e-9);
            assert!(t.get(2, 2, 2).abs() < 1e-9);
        }
        assert!(third_differences(&w, spec.flat(&[2, 8, 8]), DifferenceOrder::Fourth).is_err());
    }

    #[test]
    fn warren_pushforward_by_closed_form_differences() {
        let x0 = [0.1, 0.2, 0.3];
        let h = ClosedFormSolution::Warren { n: 3 };
        let d = zoo_eval(&h, &x0, 3).unwrap();
        let hess = d.hessian.unwrap();
        assert!(matches!(ll_point_transform(&hess, 1.0), Err(Error::Semiconvexity { .. })));
        let k = 2.0;
        let (lam, vecs, c) = crate::jacobi::to_eigenframe(&hess, &d.third.unwrap()).unwrap();
        let formula = third_order_pushforward(&lam, &c, k).unwrap();
        let src = ClosedFormPotential::new(h, k, x0.iter().map(|v| v - 0.15).collect(), x0.iter().map(|v| v + 0.15).collect()).unwrap();
        let fd = pushforward_by_differences(&src, &x0, 1.0 / 128.0).unwrap().rotate(&vecs);
        let err = Tensor3::index_triples(3).iter().map(|&(a, b, cc)| (fd.get(a, b, cc) - formula.get(a, b, cc)).abs()).fold(0.0, f64::max);
        assert!(err < 5e-4, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn involution(seed in any::<u64>(), n in 2usize..6, k in 0.5f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::Rng;
            let q = nalgebra::linalg::QR::new(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))).q();
            let lam: Vec<f64> = (0..n).map(|_| rng.random_range(-k + 0.05..5.0)).collect();
            let h = SymMatrix::new(&q * DMatrix::from_diagonal(&DVector::from_vec(lam.clone())) * q.transpose()).unwrap();
            let t = ll_point_transform(&h, k).unwrap();
            let back = ll_point_inverse(&t.m, k).unwrap();
            prop_assert!((back.matrix() - h.matrix()).amax() <= 1e-10 * (1.0 + h.matrix().amax()));
            let mut mu = t.m.eigenvalues();
            mu.sort_by(f64::total_cmp);
            let mut expect: Vec<f64> = lam.iter().map(|l| 1.0 / (l + k)).collect();
            expect.sort_by(f64::total_cmp);
            for (a, b) in mu.iter().zip(&expect) {
                prop_assert!((a - b).abs() <= 1e-10 * b.max(1.0));
            }
        }

        #[test]
        fn rule_factor_is_exact(seed in any::<u64>(), n in 3usize..6) {
            let (lam, c) = sample_admissible(n, 1.0, seed, 1).unwrap().pop().unwrap();
            let r = transformation_rule_check(&lam, &c, 1.0).unwrap();
            prop_assert!(r.sign_consistent);
            let predicted = r.predicted_factor * r.horizontal_gap;
            let scale = (r.vertical_value.abs() + predicted.abs()).max(1e-300);
            prop_assert!((r.vertical_value - predicted).abs() <= 1e-7 * scale + 1e-14, "{:?}", r);
        }
    }
}

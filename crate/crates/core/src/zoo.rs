//! Closed-form solutions with exact derivatives up to fourth order.
//!
//! Every non-quadratic entry is a sum of separable terms `P(x) g(x_a)` where `P`
//! is a diagonal quadratic in the coordinates other than `x_a` and `g` is an
//! exponential or a real power. Fractional powers `x^(p/q)` with odd `q` use
//! the sign-preserving real root, so `(-t)^(7/5) = -(t^(7/5))`.

use nalgebra::{DMatrix, DVector};
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::spectrum::{sigma2_matrix, Branch, SymMatrix, DEFAULT_BRANCH_TOL};
use crate::tensor::{Tensor3, Tensor4};

fn ratio_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Real power `x^r` for rational `r` with odd denominator, odd in `x` when the numerator is odd.
pub fn odd_root_pow(x: f64, r: Rational64) -> Result<f64> {
    if r.denom() % 2 == 0 {
        return domain(format!("exponent {r} has an even denominator"));
    }
    if x == 0.0 {
        return match r.numer().signum() {
            1 => Ok(0.0),
            0 => Ok(1.0),
            _ => domain(format!("0^{r} is singular")),
        };
    }
    let mag = if *r.denom() == 1 { x.abs().powi(*r.numer() as i32) } else { x.abs().powf(ratio_f64(r)) };
    Ok(if x < 0.0 && r.numer() % 2 != 0 { -mag } else { mag })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Profile {
    Exp(f64),
    Power(Rational64),
}

impl Profile {
    fn derivative(&self, t: f64, m: usize) -> Result<f64> {
        match *self {
            Profile::Exp(rate) => Ok(rate.powi(m as i32) * (rate * t).exp()),
            Profile::Power(e) => {
                let mut coef = 1.0;
                for j in 0..m {
                    coef *= ratio_f64(e - Rational64::from_integer(j as i64));
                }
                if coef == 0.0 {
                    return Ok(0.0);
                }
                Ok(coef * odd_root_pow(t, e - Rational64::from_integer(m as i64))?)
            }
        }
    }
}

/// `P(x) g(x_axis)` with `P = c0 + sum lin_i x_i + sum sq_i x_i^2` independent of `x_axis`.
#[derive(Debug, Clone)]
struct Term {
    c0: f64,
    lin: Vec<f64>,
    sq: Vec<f64>,
    axis: usize,
    profile: Profile,
}

impl Term {
    fn constant(n: usize, c0: f64, axis: usize, profile: Profile) -> Self {
        Self { c0, lin: vec![0.0; n], sq: vec![0.0; n], axis, profile }
    }

    /// Mixed partial derivative along the listed axes.
    fn derivative(&self, x: &[f64], axes: &[usize]) -> Result<f64> {
        let m = axes.iter().filter(|&&a| a == self.axis).count();
        let mut other: Vec<usize> = axes.iter().copied().filter(|&a| a != self.axis).collect();
        other.sort_unstable();
        let p = match other.as_slice() {
            [] => {
                self.c0
                    + x.iter().enumerate().map(|(i, xi)| self.lin[i] * xi + self.sq[i] * xi * xi).sum::<f64>()
            }
            [i] => self.lin[*i] + 2.0 * self.sq[*i] * x[*i],
            [i, j] if i == j => 2.0 * self.sq[*i],
            _ => 0.0,
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        Ok(p * self.profile.derivative(x[self.axis], m)?)
    }
}

/// Parameters of `u = r^2 t^a + gamma1 t^b + gamma2 t^c`, `r^2 = x_1^2 + ... + x_m^2`, `t = x_{m+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiSingularParams {
    pub m: usize,
    pub a: Rational64,
    pub b: Rational64,
    pub c: Rational64,
    pub gamma1: Rational64,
    pub gamma2: Rational64,
}

impl LiSingularParams {
    /// The commonly quoted coefficients, with `(c, gamma2) = (14/5, -25/28)`; they leave a nonzero residual.
    pub fn printed() -> Self {
        Self {
            m: 7,
            a: Rational64::new(7, 5),
            b: Rational64::new(3, 5),
            c: Rational64::new(14, 5),
            gamma1: Rational64::new(-25, 84),
            gamma2: Rational64::new(-25, 28),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClosedFormSolution {
    /// `u = x^T A x / 2`.
    Quadratic(SymMatrix),
    /// `(x1^2 + x2^2 - 1) e^{x3} + e^{-x3}/4`, embedded in `n >= 3` dimensions.
    Warren { n: usize },
    /// `(x1^2 + x2^2 - 1) e^{x_n} + (n-2)/4 e^{-x_n} + (x3 + ... + x_{n-1}) x_n`.
    LiNondegenerate { n: usize },
    LiSingular(LiSingularParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
    pub hessian: Option<SymMatrix>,
    pub third: Option<Tensor3>,
    pub fourth: Option<Tensor4>,
}

impl ClosedFormSolution {
    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic(a) => a.n(),
            Self::Warren { n } | Self::LiNondegenerate { n } => *n,
            Self::LiSingular(p) => p.m + 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Quadratic(_) => "quadratic",
            Self::Warren { .. } => "warren",
            Self::LiNondegenerate { .. } => "li-nondegenerate",
            Self::LiSingular(_) => "li-singular",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Warren { n } | Self::LiNondegenerate { n } if *n < 3 => domain(format!("{} needs n >= 3, got {n}", self.name())),
            Self::LiSingular(p) if p.m < 1 => domain("singular ansatz needs m >= 1"),
            _ => Ok(()),
        }
    }

    fn terms(&self) -> Vec<Term> {
        match self {
            Self::Quadratic(_) => Vec::new(),
            Self::Warren { n } => warren_like(*n, 2, 0.25),
            Self::LiNondegenerate { n } => {
                let n = *n;
                let mut t = warren_like(n, n - 1, (n as f64 - 2.0) / 4.0);
                let mut lin = Term::constant(n, 0.0, n - 1, Profile::Power(Rational64::from_integer(1)));
                for i in 2..n - 1 {
                    lin.lin[i] = 1.0;
                }
                t.push(lin);
                t
            }
            Self::LiSingular(p) => {
                let n = p.m + 1;
                let mut r2 = Term::constant(n, 0.0, p.m, Profile::Power(p.a));
                for i in 0..p.m {
                    r2.sq[i] = 1.0;
                }
                vec![
                    r2,
                    Term::constant(n, ratio_f64(p.gamma1), p.m, Profile::Power(p.b)),
                    Term::constant(n, ratio_f64(p.gamma2), p.m, Profile::Power(p.c)),
                ]
            }
        }
    }

    fn partial(&self, terms: &[Term], x: &[f64], axes: &[usize]) -> Result<f64> {
        if let Self::Quadratic(a) = self {
            return Ok(match axes {
                [] => 0.5 * (a.matrix() * DVector::from_column_slice(x)).dot(&DVector::from_column_slice(x)),
                [i] => (0..x.len()).map(|j| a.get(*i, j) * x[j]).sum(),
                [i, j] => a.get(*i, *j),
                _ => 0.0,
            });
        }
        terms.iter().map(|t| t.derivative(x, axes)).sum()
    }
}

fn warren_like(n: usize, axis: usize, tail: f64) -> Vec<Term> {
    let mut head = Term::constant(n, -1.0, axis, Profile::Exp(1.0));
    head.sq[0] = 1.0;
    head.sq[1] = 1.0;
    vec![head, Term::constant(n, tail, axis, Profile::Exp(-1.0))]
}

/// Value and derivatives up to `order` (0..=4) at `x`.
pub fn zoo_eval(s: &ClosedFormSolution, x: &[f64], order: usize) -> Result<Derivatives> {
    s.validate()?;
    let n = s.dim();
    if x.len() != n {
        return domain(format!("point has {} coordinates, solution has dimension {n}", x.len()));
    }
    if order > 4 {
        return domain(format!("derivative order {order} exceeds 4"));
    }
    if let ClosedFormSolution::LiSingular(p) = s {
        if x[p.m] == 0.0 {
            return domain("singular solution is undefined on x_{m+1} = 0");
        }
    }
    let terms = s.terms();
    let value = s.partial(&terms, x, &[])?;
    let gradient = if order >= 1 { Some((0..n).map(|i| s.partial(&terms, x, &[i])).collect::<Result<_>>()?) } else { None };
    let hessian = if order >= 2 {
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = s.partial(&terms, x, &[i, j])?;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Some(SymMatrix::new(h)?)
    } else {
        None
    };
    let third = if order >= 3 {
        let mut t = Tensor3::zeros(n);
        for (i, j, k) in Tensor3::index_triples(n) {
            t.set(i, j, k, s.partial(&terms, x, &[i, j, k])?);
        }
        Some(t)
    } else {
        None
    };
    let fourth = if order >= 4 {
        let mut t = Tensor4::zeros(n);
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    for l in k..n {
                        t.set_symmetric(i, j, k, l, s.partial(&terms, x, &[i, j, k, l])?);
                    }
                }
            }
        }
        Some(t)
    } else {
        None
    };
    Ok(Derivatives { value, gradient, hessian, third, fourth })
}

/// Box of sample points `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SampleBox {
    pub fn cube(n: usize, half: f64) -> Self {
        Self { lower: vec![-half; n], upper: vec![half; n] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualScan {
    pub samples: usize,
    /// Points outside the domain of the solution.
    pub skipped: usize,
    pub max_abs_residual: f64,
    pub min_lambda_min: f64,
    pub max_lambda_min: f64,
    pub positive_trace: usize,
    pub negative_trace: usize,
    pub positive_branch: usize,
    pub negative_branch: usize,
    pub off_level_set: usize,
    /// Least-squares slope of `ln max|u|` against `ln radius`.
    pub growth_exponent: Option<f64>,
}

/// Samples `count` seeded points in the box and reports the level-set
/// residual, semiconvexity statistics, the branch census and a growth fit.
pub fn residual_scan(s: &ClosedFormSolution, bx: &SampleBox, count: usize, seed: u64) -> Result<ResidualScan> {
    s.validate()?;
    let n = s.dim();
    if count == 0 {
        return domain("residual scan needs at least one sample");
    }
    if bx.lower.len() != n || bx.upper.len() != n || bx.lower.iter().zip(&bx.upper).any(|(l, u)| !(l <= u)) {
        return domain("sample box does not match the solution dimension");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..n).map(|a| if bx.lower[a] == bx.upper[a] { bx.lower[a] } else { rng.random_range(bx.lower[a]..bx.upper[a]) }).collect())
        .collect();
    struct Sample {
        radius: f64,
        abs_u: f64,
        residual: f64,
        lambda_min: f64,
        trace: f64,
        branch: Branch,
    }
    let evaluated: Vec<Option<Sample>> = points
        .par_iter()
        .map(|x| {
            let d = zoo_eval(s, x, 2).ok()?;
            let h = d.hessian.expect("order 2");
            let r = sigma2_matrix(&h, DEFAULT_BRANCH_TOL);
            Some(Sample {
                radius: x.iter().map(|v| v * v).sum::<f64>().sqrt(),
                abs_u: d.value.abs(),
                residual: (r.sigma2 - 1.0).abs(),
                lambda_min: h.min_eigenvalue(),
                trace: r.trace,
                branch: r.branch,
            })
        })
        .collect();
    let ok: Vec<&Sample> = evaluated.iter().flatten().collect();
    let skipped = count - ok.len();
    if ok.is_empty() {
        return domain("every sample fell outside the solution's domain");
    }
    let rmax = ok.iter().map(|s| s.radius).fold(0.0, f64::max);
    let mut fit = Vec::new();
    for j in 1..=8 {
        let r = rmax * j as f64 / 8.0;
        let m = ok.iter().filter(|s| s.radius <= r).map(|s| s.abs_u).fold(0.0, f64::max);
        if m > 0.0 && r > 0.0 {
            fit.push((r.ln(), m.ln()));
        }
    }
    let growth_exponent = (fit.len() >= 2).then(|| least_squares_slope(&fit));
    Ok(ResidualScan {
        samples: count,
        skipped,
        max_abs_residual: ok.iter().map(|s| s.residual).fold(0.0, f64::max),
        min_lambda_min: ok.iter().map(|s| s.lambda_min).fold(f64::INFINITY, f64::min),
        max_lambda_min: ok.iter().map(|s| s.lambda_min).fold(f64::NEG_INFINITY, f64::max),
        positive_trace: ok.iter().filter(|s| s.trace > 0.0).count(),
        negative_trace: ok.iter().filter(|s| s.trace < 0.0).count(),
        positive_branch: ok.iter().filter(|s| s.branch == Branch::PositiveBranch).count(),
        negative_branch: ok.iter().filter(|s| s.branch == Branch::NegativeBranch).count(),
        off_level_set: ok.iter().filter(|s| s.branch == Branch::OffLevelSet).count(),
        growth_exponent,
    })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `coef * (r^2)^r2_power * t^t_exp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: Rational64,
    pub r2_power: u32,
    pub t_exp: Rational64,
}

/// Exact expansion of `sigma_2(D^2 u) - 1` for the singular ansatz, like terms combined.
///
/// With `D^2 u = [[2 t^a I_m, v], [v^T, u_tt]]`, `v_i = 2a x_i t^(a-1)`, the bordered
/// identity gives `sigma_2 = 4 C(m,2) t^(2a) + 2m t^a u_tt - |v|^2`.
pub fn sigma2_expansion(p: &LiSingularParams) -> Vec<Monomial> {
    let one = Rational64::from_integer(1);
    let two = Rational64::from_integer(2);
    let m = p.m as i64;
    let mono = |coef, r2_power, t_exp| Monomial { coef, r2_power, t_exp };
    let tr = Rational64::from_integer(2 * m);
    let raw = [
        mono(Rational64::from_integer(2 * m * (m - 1)), 0, two * p.a),
        mono(tr * p.a * (p.a - one), 1, two * p.a - two),
        mono(tr * p.gamma1 * p.b * (p.b - one), 0, p.a + p.b - two),
        mono(tr * p.gamma2 * p.c * (p.c - one), 0, p.a + p.c - two),
        mono(-Rational64::from_integer(4) * p.a * p.a, 1, two * p.a - two),
        mono(-one, 0, Rational64::from_integer(0)),
    ];
    let mut out: Vec<Monomial> = Vec::new();
    for t in raw {
        match out.iter_mut().find(|o| o.r2_power == t.r2_power && o.t_exp == t.t_exp) {
            Some(o) => o.coef += t.coef,
            None => out.push(t),
        }
    }
    out.retain(|m| *m.coef.numer() != 0);
    out.sort_by_key(|x| (x.r2_power, x.t_exp));
    out
}

pub fn evaluate_expansion(monos: &[Monomial], r2: f64, t: f64) -> Result<f64> {
    monos.iter().map(|m| Ok(ratio_f64(m.coef) * r2.powi(m.r2_power as i32) * odd_root_pow(t, m.t_exp)?)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiResolution {
    pub resolved: LiSingularParams,
    pub printed: LiSingularParams,
    /// Empty: the resolved parameters cancel every monomial.
    pub resolved_residual: Vec<Monomial>,
    pub printed_residual: Vec<Monomial>,
    /// `max |sigma_2 - 1|` of the printed pair over `t in [0.1, 2]`, `r <= 2`.
    pub printed_residual_max: f64,
}

/// Solves for all ansatz parameters (with `m = 7`) that make `sigma_2 - 1` vanish.
///
/// The `r^2 t^(2a-2)` coefficient is `2m a(a-1) - 4a^2`, whose nonzero root is
/// `a = m/(m-2)`. The remaining monomials `t^(2a)`, `t^(a+b-2)`, `t^(a+c-2)`, `t^0`
/// cancel only in pairs; labelling by the term that absorbs the constant gives
/// `b = 2 - a`, `c = a + 2` and then linear equations for `gamma1`, `gamma2`.
pub fn resolve_li_singular() -> Result<LiResolution> {
    let m = 7i64;
    let one = Rational64::from_integer(1);
    let two = Rational64::from_integer(2);
    let a = Rational64::new(m, m - 2);
    let b = two - a;
    let c = a + two;
    let tr = Rational64::from_integer(2 * m);
    let gamma1 = one / (tr * b * (b - one));
    let gamma2 = -Rational64::from_integer(2 * m * (m - 1)) / (tr * c * (c - one));
    let resolved = LiSingularParams { m: m as usize, a, b, c, gamma1, gamma2 };
    let resolved_residual = sigma2_expansion(&resolved);
    if !resolved_residual.is_empty() {
        return Err(Error::Domain(format!("elimination left residual terms {resolved_residual:?}")));
    }
    let printed = LiSingularParams::printed();
    let printed_residual = sigma2_expansion(&printed);
    let mut printed_residual_max: f64 = 0.0;
    for i in 0..=1000 {
        let t = 0.1 + 1.9 * i as f64 / 1000.0;
        for r2 in [0.0, 4.0] {
            printed_residual_max = printed_residual_max.max(evaluate_expansion(&printed_residual, r2, t)?.abs());
        }
    }
    Ok(LiResolution { resolved, printed, resolved_residual, printed_residual, printed_residual_max })
}

/// Laplacian of the singular solution along the axis `x_1 = ... = x_m = 0`.
pub fn branch_jump_profile(p: &LiSingularParams, path: &[f64]) -> Result<Vec<(f64, f64)>> {
    let s = ClosedFormSolution::LiSingular(*p);
    path.iter()
        .map(|&t| {
            if t == 0.0 {
                return domain("branch profile path touches the singular hyperplane");
            }
            let mut x = vec![0.0; p.m + 1];
            x[p.m] = t;
            let h = zoo_eval(&s, &x, 2)?.hessian.expect("order 2");
            Ok((t, h.trace()))
        })
        .collect()
}

/// Least-squares slope of `ln|Laplacian|` against `ln|t|`.
pub fn loglog_slope(profile: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = profile.iter().filter(|p| p.1 != 0.0).map(|p| (p.0.abs().ln(), p.1.abs().ln())).collect();
    if pts.len() < 2 {
        return domain("slope fit needs two nonzero samples");
    }
    Ok(least_squares_slope(&pts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Hessian `A` of the fitted `c + b.x + x^T A x / 2`.
    pub hessian: SymMatrix,
    pub max_dev: f64,
}

/// Least-squares quadratic through `(x, u(x))` samples.
pub fn quadratic_fit(samples: &[(Vec<f64>, f64)]) -> Result<QuadraticFit> {
    let n = samples.first().map(|s| s.0.len()).ok_or(Error::RankDeficient { rank: 0, needed: 1 })?;
    if samples.iter().any(|s| s.0.len() != n) {
        return domain("samples have mixed dimensions");
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let cols = 1 + n + pairs.len();
    if samples.len() < cols {
        return Err(Error::RankDeficient { rank: samples.len(), needed: cols });
    }
    let row = |x: &[f64]| -> Vec<f64> {
        let mut r = Vec::with_capacity(cols);
        r.push(1.0);
        r.extend_from_slice(x);
        r.extend(pairs.iter().map(|&(i, j)| x[i] * x[j]));
        r
    };
    let design = DMatrix::from_fn(samples.len(), cols, |r, c| row(&samples[r].0)[c]);
    let rhs = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, needed: cols });
    }
    let coef = svd.solve(&rhs, tol).map_err(|e| Error::Domain(e.to_string()))?;
    let mut a = DMatrix::zeros(n, n);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let v = coef[1 + n + p];
        if i == j {
            a[(i, i)] = 2.0 * v;
        } else {
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let fitted = &design * &coef;
    let max_dev = (fitted - rhs).amax();
    Ok(QuadraticFit {
        constant: coef[0],
        linear: coef.rows(1, n).iter().copied().collect(),
        hessian: SymMatrix::new(a)?,
        max_dev,
    })
}

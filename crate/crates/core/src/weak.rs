//! Very weak form of `sigma_2(D^2 u) = 1`, the Hessian-mass diagnostic and
//! Laplacian sign census along sections of closed-form solutions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::GridField;
use crate::spectrum::SymMatrix;
use crate::zoo::{branch_jump_profile, loglog_slope, zoo_eval, ClosedFormSolution};

/// `phi(x) = amplitude * prod_a b((x_a - c_a)/r_a)` with `b(t) = (1 - t^2)^4` on `|t| < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub amplitude: f64,
}

fn bump(t: f64) -> [f64; 3] {
    if t.abs() >= 1.0 {
        return [0.0; 3];
    }
    let s = 1.0 - t * t;
    [s.powi(4), -8.0 * t * s.powi(3), s * s * (56.0 * t * t - 8.0)]
}

impl TestFunction {
    pub fn new(center: Vec<f64>, radii: Vec<f64>, amplitude: f64) -> Result<Self> {
        if center.len() != radii.len() || radii.iter().any(|r| !(*r > 0.0)) || !amplitude.is_finite() {
            return domain("test function needs positive radii matching the centre");
        }
        Ok(Self { center, radii, amplitude })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { amplitude: self.amplitude * t, ..self.clone() }
    }

    fn factors(&self, x: &[f64]) -> Vec<[f64; 3]> {
        (0..self.dim())
            .map(|a| {
                let r = self.radii[a];
                let [b0, b1, b2] = bump((x[a] - self.center[a]) / r);
                [b0, b1 / r, b2 / (r * r)]
            })
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.amplitude * self.factors(x).iter().map(|f| f[0]).product::<f64>()
    }

    /// Exact Hessian.
    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let f = self.factors(x);
        let n = self.dim();
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = self.amplitude
                    * (0..n)
                        .map(|a| match (a == i, a == j) {
                            (true, true) => f[a][2],
                            (true, false) | (false, true) => f[a][1],
                            _ => f[a][0],
                        })
                        .product::<f64>();
                h[i][j] = v;
                h[j][i] = v;
            }
        }
        h
    }
}

/// Kahan–Babuska (Neumaier) summation.
fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

/// `int sum_{i<j} (phi_ij u_i u_j - phi_ii u_j^2/2 - phi_jj u_i^2/2) - int phi`, with
/// trapezoid quadrature, central first differences of `u` and exact derivatives of `phi`.
pub fn very_weak_residual(u: &GridField, phi: &TestFunction) -> Result<f64> {
    let spec = &u.spec;
    let n = spec.dim();
    if phi.dim() != n {
        return domain("test function dimension differs from the grid");
    }
    let upper = spec.upper();
    for a in 0..n {
        let (lo, hi) = (phi.center[a] - phi.radii[a], phi.center[a] + phi.radii[a]);
        if !(lo >= spec.origin[a] + spec.spacing[a] && hi <= upper[a] - spec.spacing[a]) {
            return domain(format!("test function support [{lo}, {hi}] on axis {a} is not inside the grid interior"));
        }
    }
    let cell: f64 = spec.spacing.iter().product();
    let terms: Vec<f64> = spec
        .interior_nodes()
        .into_par_iter()
        .map(|f| {
            let x = spec.coord(f);
            let p = phi.value(&x);
            let h = phi.hessian(&x);
            if p == 0.0 && h.iter().flatten().all(|v| *v == 0.0) {
                return 0.0;
            }
            let du = u.gradient(f);
            let mut s = -p;
            for i in 0..n {
                for j in i + 1..n {
                    s += h[i][j] * du[i] * du[j] - 0.5 * h[i][i] * du[j] * du[j] - 0.5 * h[j][j] * du[i] * du[i];
                }
            }
            s
        })
        .collect();
    Ok(cell * neumaier(terms))
}

/// `Gamma(k/2)` for a positive integer `k`.
fn gamma_half(k: usize) -> f64 {
    let mut g = if k.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while 2.0 * x < k as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Surface area of the unit sphere in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianMass {
    /// `int_{B_1} |D^2_h u|` (Frobenius norm).
    pub l1_hessian: f64,
    pub trace_integral: f64,
    /// `max_{B_1} |D_h u|`.
    pub gradient_bound: f64,
    pub sphere_area: f64,
    /// `trace_integral / (sphere_area * gradient_bound)`.
    pub trace_ratio: f64,
    /// Nodes in `B_1` with `sigma_2(D^2_h u) < 0` or `Delta_h u <= 0`.
    pub branch_violations: usize,
    /// `l1_hessian <= trace_integral`, asserted only without branch violations.
    pub mass_bound: Option<bool>,
}

pub fn hessian_mass(u: &GridField) -> Result<HessianMass> {
    let spec = &u.spec;
    let n = spec.dim();
    let nodes: Vec<usize> = spec.interior_nodes().into_iter().filter(|&f| spec.coord(f).iter().map(|v| v * v).sum::<f64>() <= 1.0).collect();
    if nodes.is_empty() {
        return Err(Error::Resolution("no interior node in B_1".into()));
    }
    let cell: f64 = spec.spacing.iter().product();
    let per: Vec<(f64, f64, f64, bool)> = nodes
        .par_iter()
        .map(|&f| {
            let h = u.hessian(f);
            let tr = h.trace();
            let fro = h.norm_squared();
            let s2 = 0.5 * (tr * tr - fro);
            let g = u.gradient(f).iter().map(|v| v * v).sum::<f64>().sqrt();
            (fro.sqrt(), tr, g, s2 < 0.0 || tr <= 0.0)
        })
        .collect();
    let l1_hessian = cell * neumaier(per.iter().map(|p| p.0));
    let trace_integral = cell * neumaier(per.iter().map(|p| p.1));
    let gradient_bound = per.iter().map(|p| p.2).fold(0.0, f64::max);
    let branch_violations = per.iter().filter(|p| p.3).count();
    let area = sphere_area(n);
    Ok(HessianMass {
        l1_hessian,
        trace_integral,
        gradient_bound,
        sphere_area: area,
        trace_ratio: trace_integral / (area * gradient_bound),
        branch_violations,
        mass_bound: (branch_violations == 0).then_some(l1_hessian <= trace_integral),
    })
}

/// Straight section `x = base + t * direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub base: Vec<f64>,
    pub direction: Vec<f64>,
    pub ts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCensus {
    pub profile: Vec<(f64, f64)>,
    pub positive: usize,
    pub negative: usize,
    pub sign_changes: usize,
    pub min: f64,
    pub max: f64,
    /// For the singular solution along its axis: slope of `ln|Delta u|` in `ln|x_n|`.
    pub divergence_rate: Option<f64>,
}

/// Geometric sequence `10^-4 .. 10^-2` on which the leading singular term dominates.
pub fn singular_approach() -> Vec<f64> {
    (0..=20).map(|i| 10f64.powf(-4.0 + 0.1 * i as f64)).collect()
}

fn is_axis_section(s: &Section, m: usize) -> bool {
    s.base.iter().all(|v| *v == 0.0) && s.direction.iter().take(m).all(|v| *v == 0.0) && s.direction[m] == 1.0
}

/// Samples `Delta u` along a section and counts signs and sign changes.
pub fn distributional_laplacian_sign(s: &ClosedFormSolution, section: &Section) -> Result<SignCensus> {
    let n = s.dim();
    if section.base.len() != n || section.direction.len() != n {
        return domain("section dimension differs from the solution");
    }
    if section.ts.is_empty() {
        return domain("section has no sample points");
    }
    let (profile, divergence_rate) = match s {
        ClosedFormSolution::LiSingular(p) if is_axis_section(section, p.m) => {
            let prof = branch_jump_profile(p, &section.ts)?;
            (prof, loglog_slope(&branch_jump_profile(p, &singular_approach())?).ok())
        }
        _ => {
            let prof = section
                .ts
                .iter()
                .map(|&t| {
                    let x: Vec<f64> = section.base.iter().zip(&section.direction).map(|(b, d)| b + t * d).collect();
                    let lap = zoo_eval(s, &x, 2).and_then(|d| d.hessian.map(|h: SymMatrix| h.trace()).ok_or(Error::Domain("no Hessian".into())));
                    match lap {
                        Ok(l) if l.is_finite() => Ok((t, l)),
                        _ => domain(format!("section meets the singular set at t = {t}")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            (prof, None)
        }
    };
    let signs: Vec<f64> = profile.iter().map(|p| p.1.signum()).filter(|s| *s != 0.0).collect();
    Ok(SignCensus {
        positive: profile.iter().filter(|p| p.1 > 0.0).count(),
        negative: profile.iter().filter(|p| p.1 < 0.0).count(),
        sign_changes: signs.windows(2).filter(|w| w[0] != w[1]).count(),
        min: profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        max: profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        profile,
        divergence_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::zoo::resolve_li_singular;

    fn paraboloid(h: f64) -> GridField {
        GridField::from_fn(GridSpec::cube(2, -1.0, 1.0, h).unwrap(), |x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
    }

    #[test]
    fn bump_derivatives_match_differences() {
        let phi = TestFunction::new(vec![0.1, -0.2, 0.05], vec![0.5, 0.7, 0.6], 1.3).unwrap();
        let x = [0.3, -0.1, 0.2];
        let e = 1e-4;
        let h = phi.hessian(&x);
        for i in 0..3 {
            for j in 0..3 {
                let at = |di: f64, dj: f64| {
                    let mut y = x;
                    y[i] += di;
                    y[j] += dj;
                    phi.value(&y)
                };
                let fd = (at(e, e) - at(e, -e) - at(-e, e) + at(-e, -e)) / (4.0 * e * e);
                assert!((fd - h[i][j]).abs() < 1e-5, "{i}{j}: {fd} vs {}", h[i][j]);
            }
        }
    }

    #[test]
    fn paraboloid_identity_holds() {
        let phi = TestFunction::new(vec![0.1, -0.05], vec![0.6, 0.5], 1.0).unwrap();
        let r = very_weak_residual(&paraboloid(1.0 / 64.0), &phi).unwrap();
        assert!(r.abs() < 1e-6, "{r}");
    }

    #[test]
    fn residual_is_linear_in_phi() {
        let u = GridField::from_fn(GridSpec::cube(2, -1.0, 1.0, 1.0 / 32.0).unwrap(), |x| x[0].powi(4) + x[1] * x[1] * 0.7);
        let phi = TestFunction::new(vec![0.0, 0.1], vec![0.5, 0.5], 1.0).unwrap();
        let a = very_weak_residual(&u, &phi).unwrap();
        let b = very_weak_residual(&u, &phi.scaled(3.0)).unwrap();
        assert!((b - 3.0 * a).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn support_must_be_interior() {
        let phi = TestFunction::new(vec![0.8, 0.0], vec![0.5, 0.5], 1.0).unwrap();
        assert!(very_weak_residual(&paraboloid(0.125), &phi).is_err());
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-13);
    }

    #[test]
    fn paraboloid_mass() {
        let u = GridField::from_fn(GridSpec::cube(3, -1.25, 1.25, 0.125).unwrap(), |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>());
        let m = hessian_mass(&u).unwrap();
        assert_eq!(m.branch_violations, 0);
        assert!((m.l1_hessian / m.trace_integral - 3f64.sqrt() / 3.0).abs() < 1e-12);
        assert_eq!(m.mass_bound, Some(true));
    }

    #[test]
    fn violations_suppress_the_bound() {
        let u = GridField::from_fn(GridSpec::cube(2, -1.25, 1.25, 0.125).unwrap(), |x| x[0] * x[0] - x[1] * x[1] * 2.0);
        let m = hessian_mass(&u).unwrap();
        assert!(m.branch_violations > 0);
        assert_eq!(m.mass_bound, None);
    }

    #[test]
    fn sign_census_examples() {
        let q = ClosedFormSolution::Quadratic(SymMatrix::from_diagonal(&[1.0, 1.0, 0.0]));
        let sec = Section { base: vec![0.0; 3], direction: vec![1.0, 0.5, 0.0], ts: (0..21).map(|i| -1.0 + 0.1 * i as f64).collect() };
        let c = distributional_laplacian_sign(&q, &sec).unwrap();
        assert_eq!((c.negative, c.sign_changes, c.min, c.max), (0, 0, 2.0, 2.0));

        let p = resolve_li_singular().unwrap().resolved;
        let mut dir = vec![0.0; 8];
        dir[7] = 1.0;
        let ts: Vec<f64> = (1..=50).flat_map(|i| [-(i as f64) / 50.0, i as f64 / 50.0]).collect();
        let mut ts = ts;
        ts.sort_by(f64::total_cmp);
        let sec = Section { base: vec![0.0; 8], direction: dir.clone(), ts };
        let c = distributional_laplacian_sign(&ClosedFormSolution::LiSingular(p), &sec).unwrap();
        assert_eq!(c.sign_changes, 1);
        assert!((c.divergence_rate.unwrap() + 1.4).abs() < 0.05);
        let through = Section { base: vec![0.0; 8], direction: dir, ts: vec![-0.5, 0.0, 0.5] };
        assert!(distributional_laplacian_sign(&ClosedFormSolution::LiSingular(p), &through).is_err());

        let w = ClosedFormSolution::Warren { n: 3 };
        let sec = Section { base: vec![0.3, -0.2, 0.0], direction: vec![0.2, 0.4, 1.0], ts: (0..41).map(|i| -2.0 + 0.1 * i as f64).collect() };
        assert_eq!(distributional_laplacian_sign(&w, &sec).unwrap().negative, 0);
    }
}

//! Two-dimensional chain from a minimal graph to a harmonic function: conjugate
//! functions, the Heinz potential with `det D^2 u = 1`, the maximal-surface
//! conjugate, and the Legendre–Lewy transform of the potential.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::legendre::ll_grid_transform;

/// Closed-form minimal graphs over a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MinimalGraph2D {
    /// `f = a.x + c`.
    Plane { a: [f64; 2], c: f64 },
    /// `f = ln(cos x2 / cos x1)` on `|x_i| < pi/2`.
    Scherk,
}

/// Value, gradient and Hessian `[f11, f12, f22]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphJet {
    pub f: f64,
    pub df: [f64; 2],
    pub d2f: [f64; 3],
}

impl MinimalGraph2D {
    pub fn jet(&self, x: &[f64]) -> Result<GraphJet> {
        match *self {
            Self::Plane { a, c } => Ok(GraphJet { f: a[0] * x[0] + a[1] * x[1] + c, df: a, d2f: [0.0; 3] }),
            Self::Scherk => {
                let half = std::f64::consts::FRAC_PI_2;
                if x[0].abs() >= half || x[1].abs() >= half {
                    return domain(format!("Scherk graph is defined for |x_i| < pi/2, got {x:?}"));
                }
                let (c1, c2) = (x[0].cos(), x[1].cos());
                Ok(GraphJet {
                    f: (c2 / c1).ln(),
                    df: [x[0].tan(), -x[1].tan()],
                    d2f: [1.0 / (c1 * c1), 0.0, -1.0 / (c2 * c2)],
                })
            }
        }
    }

    /// `(1 + f2^2) f11 - 2 f1 f2 f12 + (1 + f1^2) f22`.
    pub fn minimal_surface_residual(&self, x: &[f64]) -> Result<f64> {
        let j = self.jet(x)?;
        let [f1, f2] = j.df;
        let [f11, f12, f22] = j.d2f;
        Ok((1.0 + f2 * f2) * f11 - 2.0 * f1 * f2 * f12 + (1.0 + f1 * f1) * f22)
    }

    /// The three closed 1-forms `(x1*, x2*, f*)` as coefficient pairs `(dx1, dx2)`.
    pub fn forms(&self, x: &[f64]) -> Result<[[f64; 2]; 3]> {
        let j = self.jet(x)?;
        let [f1, f2] = j.df;
        let w = (1.0 + f1 * f1 + f2 * f2).sqrt();
        Ok([[f1 * f2 / w, (1.0 + f2 * f2) / w], [(1.0 + f1 * f1) / w, f1 * f2 / w], [-f2 / w, f1 / w]])
    }

    fn validate_grid(&self, spec: &GridSpec) -> Result<()> {
        if spec.dim() != 2 {
            return domain("minimal graphs live on two-dimensional grids");
        }
        for x in [spec.origin.clone(), spec.upper()] {
            self.jet(&x)?;
        }
        Ok(())
    }
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Integral of form `k` along the grid edge from node `from` one step along `axis`.
fn edge_integral(mg: &MinimalGraph2D, spec: &GridSpec, from: usize, axis: usize) -> Result<[f64; 3]> {
    let x0 = spec.coord(from);
    let h = spec.spacing[axis];
    let mut acc = [0.0; 3];
    for (s, w) in GAUSS4 {
        let mut x = x0.clone();
        x[axis] += 0.5 * h * (1.0 + s);
        let forms = mg.forms(&x)?;
        for (k, a) in acc.iter_mut().enumerate() {
            *a += 0.5 * h * w * forms[k][axis];
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conjugates {
    pub x1s: GridField,
    pub x2s: GridField,
    pub fs: GridField,
    /// Max discrepancy between the two L-shaped paths from the lower-left corner.
    pub path_err: f64,
}

/// Integrates the conjugate 1-forms from the lower-left corner along
/// "axis 0 then axis 1"; the other order measures closedness.
pub fn conjugate_functions(mg: &MinimalGraph2D, spec: &GridSpec) -> Result<Conjugates> {
    mg.validate_grid(spec)?;
    let (m0, m1) = (spec.shape[0], spec.shape[1]);
    let node = |i: usize, j: usize| spec.flat(&[i, j]);
    // Edge integrals along axis 0 for every row and along axis 1 for every column.
    let h_edges: Vec<Vec<[f64; 3]>> = (0..m1)
        .into_par_iter()
        .map(|j| (0..m0 - 1).map(|i| edge_integral(mg, spec, node(i, j), 0)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let v_edges: Vec<Vec<[f64; 3]>> = (0..m0)
        .into_par_iter()
        .map(|i| (0..m1 - 1).map(|j| edge_integral(mg, spec, node(i, j), 1)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let prefix = |edges: &[[f64; 3]]| {
        let mut out = vec![[0.0; 3]];
        for e in edges {
            let last = *out.last().expect("nonempty");
            out.push([last[0] + e[0], last[1] + e[1], last[2] + e[2]]);
        }
        out
    };
    let h_pre: Vec<Vec<[f64; 3]>> = h_edges.iter().map(|r| prefix(r)).collect();
    let v_pre: Vec<Vec<[f64; 3]>> = v_edges.iter().map(|c| prefix(c)).collect();
    let mut vals = vec![vec![0.0; spec.len()]; 3];
    let mut path_err: f64 = 0.0;
    for i in 0..m0 {
        for j in 0..m1 {
            let f = node(i, j);
            for k in 0..3 {
                let a = h_pre[0][i][k] + v_pre[i][j][k];
                let b = v_pre[0][j][k] + h_pre[j][i][k];
                vals[k][f] = a;
                path_err = path_err.max((a - b).abs());
            }
        }
    }
    let [x1s, x2s, fs]: [Vec<f64>; 3] = vals.try_into().expect("three forms");
    Ok(Conjugates {
        x1s: GridField::new(spec.clone(), x1s)?,
        x2s: GridField::new(spec.clone(), x2s)?,
        fs: GridField::new(spec.clone(), fs)?,
        path_err,
    })
}

/// Mismatch above which the gradient field `(x2*, x1*)` is declared non-integrable.
pub const INTEGRABILITY_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heinz {
    pub u: GridField,
    /// `max |det D^2_h u - 1|` over interior nodes.
    pub det_residual: f64,
    /// `max |d2 x2* - d1 x1*|` over interior nodes.
    pub sym_check: f64,
    /// `max |D^2_h u - metric/W|` entrywise over interior nodes.
    pub metric_err: f64,
}

/// Potential with `Du = (x2*, x1*)`, integrated by the trapezoid rule along
/// the bottom row and then up each column.
pub fn heinz_potential(mg: &MinimalGraph2D, spec: &GridSpec) -> Result<Heinz> {
    let c = conjugate_functions(mg, spec)?;
    let interior = spec.interior_nodes();
    let sym_check = interior
        .par_iter()
        .map(|&f| (c.x2s.gradient(f)[1] - c.x1s.gradient(f)[0]).abs())
        .reduce(|| 0.0, f64::max);
    if sym_check > INTEGRABILITY_TOL {
        return Err(Error::Integrability(sym_check));
    }
    let (m0, m1) = (spec.shape[0], spec.shape[1]);
    let (h0, h1) = (spec.spacing[0], spec.spacing[1]);
    let node = |i: usize, j: usize| spec.flat(&[i, j]);
    let mut u = vec![0.0; spec.len()];
    for i in 1..m0 {
        u[node(i, 0)] = u[node(i - 1, 0)] + 0.5 * h0 * (c.x2s.values[node(i - 1, 0)] + c.x2s.values[node(i, 0)]);
    }
    for i in 0..m0 {
        for j in 1..m1 {
            u[node(i, j)] = u[node(i, j - 1)] + 0.5 * h1 * (c.x1s.values[node(i, j - 1)] + c.x1s.values[node(i, j)]);
        }
    }
    let u = GridField::new(spec.clone(), u)?;
    let errs: Vec<(f64, f64)> = interior
        .par_iter()
        .map(|&f| {
            let h = u.hessian(f);
            let j = mg.jet(&spec.coord(f)).expect("validated box");
            let [f1, f2] = j.df;
            let w = (1.0 + f1 * f1 + f2 * f2).sqrt();
            let target = [(1.0 + f1 * f1) / w, f1 * f2 / w, (1.0 + f2 * f2) / w];
            let got = [h[(0, 0)], h[(0, 1)], h[(1, 1)]];
            let metric = target.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ((h.determinant() - 1.0).abs(), metric)
        })
        .collect();
    Ok(Heinz {
        u,
        det_residual: errs.iter().map(|e| e.0).fold(0.0, f64::max),
        sym_check,
        metric_err: errs.iter().map(|e| e.1).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalReport {
    /// Max over interior nodes of the discrete maximal-surface operator applied to `f*`.
    pub residual: f64,
    /// Max of `|Df*|`, closed form at all nodes and central differences at interior nodes.
    pub max_grad_norm: f64,
    /// `max |sqrt(1 - |Df*|^2) sqrt(1 + |Df|^2) - 1|` with the closed-form `Df*`.
    pub identity_err: f64,
}

/// `div(Df*/sqrt(1 - |Df*|^2))` in nondivergence form with central differences.
pub fn maximal_residual(mg: &MinimalGraph2D, spec: &GridSpec) -> Result<MaximalReport> {
    let c = conjugate_functions(mg, spec)?;
    let mut max_grad_norm: f64 = 0.0;
    let mut identity_err: f64 = 0.0;
    for f in 0..spec.len() {
        let x = spec.coord(f);
        let j = mg.jet(&x)?;
        let [f1, f2] = j.df;
        let w = (1.0 + f1 * f1 + f2 * f2).sqrt();
        let g2 = (f1 * f1 + f2 * f2) / (w * w);
        let norm = g2.sqrt();
        if norm >= 1.0 {
            return Err(Error::Lorentz { node: spec.multi(f), norm });
        }
        max_grad_norm = max_grad_norm.max(norm);
        identity_err = identity_err.max(((1.0 - g2).sqrt() * w - 1.0).abs());
    }
    let mut residual: f64 = 0.0;
    for f in spec.interior_nodes() {
        let p = c.fs.gradient(f);
        let p2 = p[0] * p[0] + p[1] * p[1];
        if p2 >= 1.0 {
            return Err(Error::Lorentz { node: spec.multi(f), norm: p2.sqrt() });
        }
        max_grad_norm = max_grad_norm.max(p2.sqrt());
        let h = c.fs.hessian(f);
        let lap = h[(0, 0)] + h[(1, 1)];
        let pp = p[0] * p[0] * h[(0, 0)] + 2.0 * p[0] * p[1] * h[(0, 1)] + p[1] * p[1] * h[(1, 1)];
        residual = residual.max((((1.0 - p2) * lap + pp) / (1.0 - p2).powf(1.5)).abs());
    }
    Ok(MaximalReport { residual, max_grad_norm, identity_err })
}

/// `max |Delta_g b - |grad_g b|^2 - |II|_g^2|` for `b = ln sqrt(1 + |Df|^2)` on the graph
/// metric `g = I + Df Df^T`, over nodes at depth >= 4. The Laplace–Beltrami operator is
/// applied in divergence form with nested fourth-order central differences of the closed-form `b`.
pub fn minimal_jacobi_equality(mg: &MinimalGraph2D, spec: &GridSpec) -> Result<f64> {
    mg.validate_grid(spec)?;
    let b = GridField::new(spec.clone(), (0..spec.len()).map(|f| mg.jet(&spec.coord(f)).map(|j| 0.5 * (1.0 + j.df[0] * j.df[0] + j.df[1] * j.df[1]).ln())).collect::<Result<_>>()?)?;
    let metric = |x: &[f64]| {
        let j = mg.jet(x).expect("validated box");
        let [f1, f2] = j.df;
        let w2 = 1.0 + f1 * f1 + f2 * f2;
        let ginv = [[1.0 - f1 * f1 / w2, -f1 * f2 / w2], [-f1 * f2 / w2, 1.0 - f2 * f2 / w2]];
        (j, w2.sqrt(), ginv)
    };
    let d1 = |v: &[f64], f: usize, a: usize| {
        let st = spec.stride(a);
        (-v[f + 2 * st] + 8.0 * v[f + st] - 8.0 * v[f - st] + v[f - 2 * st]) / (12.0 * spec.spacing[a])
    };
    // Flux V_i = W g^ij b_j at depth >= 2.
    let mut flux = vec![vec![0.0; spec.len()]; 2];
    for f in (0..spec.len()).filter(|&f| spec.depth(f) >= 2) {
        let (_, w, gi) = metric(&spec.coord(f));
        let db = [d1(&b.values, f, 0), d1(&b.values, f, 1)];
        for i in 0..2 {
            flux[i][f] = w * (gi[i][0] * db[0] + gi[i][1] * db[1]);
        }
    }
    let worst = (0..spec.len())
        .into_par_iter()
        .filter(|&f| spec.depth(f) >= 4)
        .map(|f| {
            let (j, w, gi) = metric(&spec.coord(f));
            let div: f64 = (0..2).map(|i| d1(&flux[i], f, i)).sum();
            let db = [d1(&b.values, f, 0), d1(&b.values, f, 1)];
            let grad2: f64 = (0..2).flat_map(|i| (0..2).map(move |k| (i, k))).map(|(i, k)| gi[i][k] * db[i] * db[k]).sum();
            let ii = [[j.d2f[0] / w, j.d2f[1] / w], [j.d2f[1] / w, j.d2f[2] / w]];
            let mut second = 0.0;
            for i in 0..2 {
                for jj in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            second += gi[i][k] * gi[jj][l] * ii[i][jj] * ii[k][l];
                        }
                    }
                }
            }
            (div / w - grad2 - second).abs()
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JorgensReport {
    /// `max |Delta_h w - 1|` over nodes whose stencil lies in the gradient image.
    pub max_dev: f64,
    pub nodes: usize,
    pub heinz_det_residual: f64,
    pub roundtrip_err: f64,
}

/// Heinz potential, then Legendre–Lewy with `K = 1`: `w` is harmonic with `Delta w = 1`.
pub fn jorgens_chain(mg: &MinimalGraph2D, spec: &GridSpec) -> Result<JorgensReport> {
    let heinz = heinz_potential(mg, spec)?;
    let t = ll_grid_transform(&heinz.u, 1.0)?;
    let ws = &t.w.spec;
    let full = |f: usize| {
        let s0 = ws.stride(0);
        let s1 = ws.stride(1);
        [f, f + s0, f - s0, f + s1, f - s1, f + s0 + s1, f + s0 - s1, f - s0 + s1, f - s0 - s1].iter().all(|&g| t.inside[g])
    };
    let nodes: Vec<usize> = ws.interior_nodes().into_iter().filter(|&f| full(f)).collect();
    if nodes.is_empty() {
        return Err(Error::Resolution("no transformed node with a full stencil inside the gradient image".into()));
    }
    let max_dev = nodes.iter().map(|&f| (t.w.laplacian(f) - 1.0).abs()).fold(0.0, f64::max);
    Ok(JorgensReport { max_dev, nodes: nodes.len(), heinz_det_residual: heinz.det_residual, roundtrip_err: t.roundtrip_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(half: f64, h: f64) -> GridSpec {
        GridSpec::cube(2, -half, half, h).unwrap()
    }

    #[test]
    fn closed_forms_are_minimal() {
        for x in [[0.3, -0.7], [1.2, 0.4], [-1.0, 1.0]] {
            assert!(MinimalGraph2D::Scherk.minimal_surface_residual(&x).unwrap().abs() < 1e-10);
            let j = MinimalGraph2D::Scherk.jet(&x).unwrap();
            let [f1, f2] = j.df;
            let lhs = (1.0 + f1 * f1) * (1.0 + f2 * f2) - f1 * f1 * f2 * f2;
            assert!((lhs - (1.0 + f1 * f1 + f2 * f2)).abs() < 1e-12);
        }
        assert!(MinimalGraph2D::Scherk.jet(&[1.6, 0.0]).is_err());
    }

    #[test]
    fn flat_graph_conjugates() {
        let spec = square(1.0, 0.25);
        let c = conjugate_functions(&MinimalGraph2D::Plane { a: [0.0, 0.0], c: 0.0 }, &spec).unwrap();
        for f in 0..spec.len() {
            let x = spec.coord(f);
            assert!((c.x1s.values[f] - (x[1] + 1.0)).abs() < 1e-14);
            assert!((c.x2s.values[f] - (x[0] + 1.0)).abs() < 1e-14);
            assert_eq!(c.fs.values[f], 0.0);
        }
        let h = heinz_potential(&MinimalGraph2D::Plane { a: [0.0, 0.0], c: 0.0 }, &spec).unwrap();
        assert!(h.det_residual < 1e-12);
        assert_eq!(maximal_residual(&MinimalGraph2D::Plane { a: [0.0, 0.0], c: 0.0 }, &spec).unwrap().residual, 0.0);
    }

    #[test]
    fn plane_examples() {
        let spec = square(1.0, 0.125);
        let mg = MinimalGraph2D::Plane { a: [1.0, 0.0], c: 0.0 };
        let h = heinz_potential(&mg, &spec).unwrap();
        assert!(h.det_residual < 1e-11);
        let f = spec.flat(&[8, 8]);
        let d2 = h.u.hessian(f);
        assert!((d2[(0, 0)] - 2f64.sqrt()).abs() < 1e-10 && (d2[(1, 1)] - 0.5f64.sqrt()).abs() < 1e-10);

        let mg = MinimalGraph2D::Plane { a: [2.0, 0.0], c: 1.0 };
        let c = conjugate_functions(&mg, &spec).unwrap();
        let g = c.fs.gradient(f);
        assert!(g[0].abs() < 1e-13 && (g[1] - 2.0 / 5f64.sqrt()).abs() < 1e-13);
        let m = maximal_residual(&mg, &spec).unwrap();
        assert!(m.residual < 1e-10);
        assert!(m.identity_err < 1e-14);
        assert!((m.max_grad_norm - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scherk_chain() {
        let spec = square(1.0, 1.0 / 64.0);
        let mg = MinimalGraph2D::Scherk;
        let c = conjugate_functions(&mg, &spec).unwrap();
        assert!(c.path_err < 1e-10, "{}", c.path_err);
        let h = heinz_potential(&mg, &spec).unwrap();
        assert!(h.det_residual < 1e-2, "{}", h.det_residual);
        let m = maximal_residual(&mg, &spec).unwrap();
        assert!(m.max_grad_norm < 1.0 && m.identity_err < 1e-8);
        let j = jorgens_chain(&mg, &GridSpec::cube(2, -1.0, 1.0, 1.0 / 16.0).unwrap()).unwrap();
        assert!(j.max_dev < 1e-2, "{}", j.max_dev);
    }

    #[test]
    fn jacobi_equality_on_minimal_graphs() {
        let spec = square(1.0, 1.0 / 256.0);
        let e = minimal_jacobi_equality(&MinimalGraph2D::Scherk, &spec).unwrap();
        assert!(e < 1e-6, "{e}");
        let e = minimal_jacobi_equality(&MinimalGraph2D::Plane { a: [0.5, -1.0], c: 0.0 }, &square(1.0, 0.125)).unwrap();
        assert!(e < 1e-12);
    }

    #[test]
    fn three_dimensional_grid_rejected() {
        assert!(conjugate_functions(&MinimalGraph2D::Scherk, &GridSpec::cube(3, -1.0, 1.0, 0.5).unwrap()).is_err());
    }
}

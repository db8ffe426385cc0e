//! Damped Newton solver for the Dirichlet problem `sigma_2(D^2 u) = f` on boxes,
//! applied to the concave residual `Delta u - sqrt(2f + |D^2 u|^2)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::linear::{bicgstab, conjugate_gradient, norm_inf};
use crate::zoo::{zoo_eval, ClosedFormSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub max_newton_iters: usize,
    /// Target for the discrete max-norm of the residual.
    pub residual_tol: f64,
    /// Step reduction factor in `(0, 1)`.
    pub backtrack: f64,
    pub min_step: f64,
    /// Upper bound for the inexact-Newton forcing term.
    pub linear_rtol: f64,
    pub linear_max_iters: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_newton_iters: 50,
            residual_tol: 1e-10,
            backtrack: 0.5,
            min_step: 1.0 / 1024.0,
            linear_rtol: 0.1,
            linear_max_iters: 20_000,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0 && self.linear_rtol > 0.0 && self.min_step > 0.0 && self.min_step <= 1.0) {
            return domain("tolerances and the minimum step must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return domain(format!("backtracking factor must lie in (0, 1), got {}", self.backtrack));
        }
        Ok(())
    }
}

/// Right-hand side `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum Rhs {
    Constant(f64),
    Field(GridField),
}

impl Rhs {
    fn at(&self, flat: usize) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Field(f) => f.values[flat],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub residual: f64,
    /// Accepted step length (0 for the initial guess).
    pub step: f64,
    pub backtracks: usize,
    pub linear_iterations: usize,
    pub min_laplacian: f64,
    /// Smallest eigenvalue over nodes of `I - D^2 u / sqrt(2f + |D^2 u|^2)`.
    pub min_coefficient_eig: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveLog {
    pub entries: Vec<LogEntry>,
}

impl SolveLog {
    pub fn to_json_lines(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n").collect()
    }

    pub fn final_residual(&self) -> f64 {
        self.entries.last().map_or(f64::INFINITY, |e| e.residual)
    }

    /// Accepted residuals never increase.
    pub fn is_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].residual <= w[0].residual)
    }
}

struct Problem<'a> {
    spec: &'a GridSpec,
    rhs: &'a Rhs,
    interior: Vec<usize>,
    inv_h2: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.spec.dim()
    }

    /// Residuals, coefficient matrices (row-major per node) and nodal Laplacians.
    fn linearize(&self, u: &GridField) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let per: Vec<(f64, Vec<f64>, f64)> = self
            .interior
            .par_iter()
            .map(|&f| {
                let h = u.hessian(f);
                let tr = h.trace();
                let root = (2.0 * self.rhs.at(f) + h.norm_squared()).sqrt();
                let fc: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 } - h[(k / n, k % n)] / root).collect();
                (tr - root, fc, tr)
            })
            .collect();
        let mut r = Vec::with_capacity(per.len());
        let mut c = Vec::with_capacity(per.len() * n * n);
        let mut lap = Vec::with_capacity(per.len());
        for (ri, ci, li) in per {
            r.push(ri);
            c.extend(ci);
            lap.push(li);
        }
        (r, c, lap)
    }

    fn residual(&self, u: &GridField) -> (Vec<f64>, Vec<f64>) {
        self.interior
            .par_iter()
            .map(|&f| {
                let h = u.hessian(f);
                let tr = h.trace();
                (tr - (2.0 * self.rhs.at(f) + h.norm_squared()).sqrt(), tr)
            })
            .unzip()
    }

    fn scatter(&self, v: &[f64]) -> GridField {
        let mut full = vec![0.0; self.spec.len()];
        for (&f, x) in self.interior.iter().zip(v) {
            full[f] = *x;
        }
        GridField { spec: self.spec.clone(), values: full }
    }

    /// `sum_ij C_ij D_ij v` at interior nodes, `v = 0` on the boundary.
    fn apply(&self, coef: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n();
        let g = self.scatter(v);
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let f = self.interior[k];
            let c = &coef[k * n * n..(k + 1) * n * n];
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if c[i * n + j] != 0.0 {
                        s += c[i * n + j] * g.second_diff(f, i, j);
                    }
                }
            }
            *o = s;
        });
    }

    fn diagonal(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..self.interior.len()).map(|k| -(0..n).map(|i| 2.0 * coef[k * n * n + i * n + i] * self.inv_h2[i]).sum::<f64>()).collect()
    }

    fn min_coefficient_eig(&self, coef: &[f64]) -> f64 {
        let n = self.n();
        coef.par_chunks(n * n)
            .map(|c| nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(n, n, c)).eigenvalues.min())
            .reduce(|| f64::INFINITY, f64::min)
    }
}

fn guard(spec: &GridSpec, interior: &[usize], lap: &[f64]) -> Option<(Vec<usize>, f64)> {
    lap.iter().position(|l| !(*l > 0.0)).map(|k| (spec.multi(interior[k]), lap[k]))
}

/// Initial guess: `s|x - c|^2/2` with `sigma_2(s I) = mean f`, plus the discrete
/// harmonic extension of the remaining boundary data.
fn initial_guess(p: &Problem, boundary: &GridField, cfg: &SolveConfig) -> Result<GridField> {
    let spec = p.spec;
    let n = spec.dim();
    let mean_f = spec.interior_nodes().iter().map(|&f| p.rhs.at(f)).sum::<f64>() / p.interior.len() as f64;
    let s = (2.0 * mean_f / (n * (n - 1)) as f64).sqrt();
    let upper = spec.upper();
    let centre: Vec<f64> = (0..n).map(|a| 0.5 * (spec.origin[a] + upper[a])).collect();
    let q = GridField::from_fn(spec.clone(), |x| 0.5 * s * x.iter().zip(&centre).map(|(a, c)| (a - c) * (a - c)).sum::<f64>());
    let mut corr = GridField { spec: spec.clone(), values: boundary.values.iter().zip(&q.values).map(|(g, q)| g - q).collect() };
    for &f in &p.interior {
        corr.values[f] = 0.0;
    }
    // -Delta_h v = Delta_h (boundary lift) on the interior unknowns.
    let b: Vec<f64> = p.interior.iter().map(|&f| corr.laplacian(f)).collect();
    let lap_coef: Vec<f64> = (0..p.interior.len()).flat_map(|_| (0..n * n).map(move |k| if k / n == k % n { -1.0 } else { 0.0 })).collect();
    let diag: Vec<f64> = p.diagonal(&lap_coef);
    let op = |v: &[f64], out: &mut [f64]| p.apply(&lap_coef, v, out);
    let mut v = vec![0.0; b.len()];
    conjugate_gradient(&op, &diag, &b, &mut v, 1e-13, cfg.linear_max_iters)?;
    let mut u = q;
    for (k, &f) in p.interior.iter().enumerate() {
        u.values[f] += v[k];
    }
    for f in 0..spec.len() {
        if !spec.is_interior(f) {
            u.values[f] = boundary.values[f];
        }
    }
    Ok(u)
}

/// Solves `sigma_2(D^2 u) = f` on the positive branch with Dirichlet data taken
/// from the boundary nodes of `boundary` (its interior values are ignored).
pub fn solve_dirichlet(boundary: &GridField, rhs: &Rhs, cfg: &SolveConfig) -> Result<(GridField, SolveLog)> {
    cfg.validate()?;
    let spec = &boundary.spec;
    if !(2..=3).contains(&spec.dim()) {
        return domain(format!("the solver supports dimensions 2 and 3, got {}", spec.dim()));
    }
    match rhs {
        Rhs::Constant(c) if !(*c > 0.0) => return domain(format!("right-hand side must be positive, got {c}")),
        Rhs::Field(f) if f.spec != *spec => return domain("right-hand side grid differs from the boundary grid"),
        Rhs::Field(f) => {
            if let Some(k) = f.values.iter().position(|v| !(*v > 0.0)) {
                return domain(format!("right-hand side must be positive, got {} at node {:?}", f.values[k], spec.multi(k)));
            }
        }
        _ => {}
    }
    let interior = spec.interior_nodes();
    if interior.is_empty() {
        return Err(Error::Resolution("grid has no interior nodes".into()));
    }
    let p = Problem { spec, rhs, inv_h2: spec.spacing.iter().map(|h| 1.0 / (h * h)).collect(), interior };

    let mut u = initial_guess(&p, boundary, cfg)?;
    let mut log = SolveLog::default();
    let (mut r, mut coef, lap) = p.linearize(&u);
    if let Some((node, laplacian)) = guard(spec, &p.interior, &lap) {
        return Err(Error::BranchLeft { node, laplacian });
    }
    let mut rnorm = norm_inf(&r);
    log.entries.push(LogEntry {
        iteration: 0,
        residual: rnorm,
        step: 0.0,
        backtracks: 0,
        linear_iterations: 0,
        min_laplacian: lap.iter().copied().fold(f64::INFINITY, f64::min),
        min_coefficient_eig: p.min_coefficient_eig(&coef),
    });

    for it in 1..=cfg.max_newton_iters {
        if rnorm <= cfg.residual_tol {
            return Ok((u, log));
        }
        let diag = p.diagonal(&coef);
        let op = |v: &[f64], out: &mut [f64]| p.apply(&coef, v, out);
        let b: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut delta = vec![0.0; b.len()];
        let eta = cfg.linear_rtol.min(rnorm).max(1e-14);
        let stats = bicgstab(&op, &diag, &b, &mut delta, eta, cfg.linear_max_iters)?;

        let mut t = 1.0;
        let mut backtracks = 0;
        let mut last_branch: Option<(Vec<usize>, f64)> = None;
        let accepted = loop {
            let mut trial = u.clone();
            for (k, &f) in p.interior.iter().enumerate() {
                trial.values[f] += t * delta[k];
            }
            let (rt, lap_t) = p.residual(&trial);
            match guard(spec, &p.interior, &lap_t) {
                Some(b) => last_branch = Some(b),
                None => {
                    let rn = norm_inf(&rt);
                    if rn < rnorm {
                        break Some((trial, rn));
                    }
                }
            }
            t *= cfg.backtrack;
            backtracks += 1;
            if t < cfg.min_step {
                break None;
            }
        };
        let Some((trial, rn)) = accepted else {
            if let Some((node, laplacian)) = last_branch {
                return Err(Error::BranchLeft { node, laplacian });
            }
            return Err(Error::NonConvergence { residual: rnorm, iterations: it - 1 });
        };
        u = trial;
        rnorm = rn;
        let (r_new, coef_new, lap) = p.linearize(&u);
        r = r_new;
        coef = coef_new;
        log.entries.push(LogEntry {
            iteration: it,
            residual: rnorm,
            step: t,
            backtracks,
            linear_iterations: stats.iterations,
            min_laplacian: lap.iter().copied().fold(f64::INFINITY, f64::min),
            min_coefficient_eig: p.min_coefficient_eig(&coef),
        });
    }
    if rnorm <= cfg.residual_tol {
        Ok((u, log))
    } else {
        Err(Error::NonConvergence { residual: rnorm, iterations: cfg.max_newton_iters })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Order {
    /// Both errors at round-off level.
    Exact,
    Observed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub h: f64,
    pub max_error: f64,
    pub newton_iterations: usize,
    /// Relative to the previous (coarser) row.
    pub order: Option<Order>,
}

/// Errors below this count as round-off.
pub const ROUNDOFF_ERROR: f64 = 1e-9;

/// Solves with exact boundary data on `[lower, upper]` for each spacing and
/// reports interior max errors and observed orders.
pub fn convergence_study(s: &ClosedFormSolution, lower: &[f64], upper: &[f64], hs: &[f64], cfg: &SolveConfig) -> Result<Vec<StudyRow>> {
    if s.dim() != lower.len() || s.dim() != upper.len() {
        return domain(format!(
            "{} lives in {} dimensions but the box has {}; a section of a solution is not a solution",
            s.name(),
            s.dim(),
            lower.len()
        ));
    }
    let mut rows: Vec<StudyRow> = Vec::with_capacity(hs.len());
    for &h in hs {
        let spec = GridSpec::from_box(lower, upper, h)?;
        let exact = GridField::new(spec.clone(), (0..spec.len()).map(|f| zoo_eval(s, &spec.coord(f), 0).map(|d| d.value)).collect::<Result<_>>()?)?;
        let (u, log) = solve_dirichlet(&exact, &Rhs::Constant(1.0), cfg)?;
        let max_error = spec.interior_nodes().iter().map(|&f| (u.values[f] - exact.values[f]).abs()).fold(0.0, f64::max);
        let order = rows.last().map(|prev| {
            if prev.max_error <= ROUNDOFF_ERROR && max_error <= ROUNDOFF_ERROR {
                Order::Exact
            } else {
                Order::Observed((prev.max_error / max_error).ln() / (prev.h / h).ln())
            }
        });
        rows.push(StudyRow { h, max_error, newton_iterations: log.entries.len() - 1, order });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::SymMatrix;

    fn quadratic_boundary(h: f64) -> GridField {
        GridField::from_fn(GridSpec::cube(2, 0.0, 1.0, h).unwrap(), |x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
    }

    #[test]
    fn quadratic_is_reproduced() {
        let g = quadratic_boundary(1.0 / 16.0);
        let (u, log) = solve_dirichlet(&g, &Rhs::Constant(1.0), &SolveConfig::default()).unwrap();
        let err = u.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-9, "{err}");
        assert!(log.final_residual() <= 1e-10);
        assert!(log.is_monotone());
        assert!(log.entries.iter().all(|e| e.min_laplacian > 0.0 && e.min_coefficient_eig > 0.0));
    }

    #[test]
    fn solver_is_deterministic() {
        let g = quadratic_boundary(1.0 / 8.0);
        let a = solve_dirichlet(&g, &Rhs::Constant(1.0), &SolveConfig::default()).unwrap();
        let b = solve_dirichlet(&g, &Rhs::Constant(1.0), &SolveConfig::default()).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn nonpositive_rhs_is_rejected() {
        let g = quadratic_boundary(0.25);
        assert!(matches!(solve_dirichlet(&g, &Rhs::Constant(0.0), &SolveConfig::default()), Err(Error::Domain(_))));
        let mut f = GridField::from_fn(g.spec.clone(), |_| 1.0);
        f.values[7] = 0.0;
        assert!(matches!(solve_dirichlet(&g, &Rhs::Field(f), &SolveConfig::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn variable_rhs_manufactured() {
        // u = x^4/12 + y^2/2 has sigma_2 = x^2.
        let spec = GridSpec::from_box(&[1.0, 0.0], &[2.0, 1.0], 1.0 / 32.0).unwrap();
        let exact = GridField::from_fn(spec.clone(), |x| x[0].powi(4) / 12.0 + 0.5 * x[1] * x[1]);
        let f = GridField::from_fn(spec.clone(), |x| x[0] * x[0]);
        let (u, _) = solve_dirichlet(&exact, &Rhs::Field(f), &SolveConfig::default()).unwrap();
        let err = u.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn study_of_quadratic_is_exact() {
        let s = ClosedFormSolution::Quadratic(SymMatrix::from_diagonal(&[1.0, 1.0, 0.0]));
        let rows = convergence_study(&s, &[-0.5; 3], &[0.5; 3], &[0.125, 0.0625], &SolveConfig::default()).unwrap();
        assert_eq!(rows[1].order, Some(Order::Exact));
    }

    #[test]
    fn sections_are_rejected() {
        let s = ClosedFormSolution::LiNondegenerate { n: 4 };
        assert!(matches!(convergence_study(&s, &[-0.5; 3], &[0.5; 3], &[0.125], &SolveConfig::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn log_is_json_lines() {
        let g = quadratic_boundary(0.25);
        let (_, log) = solve_dirichlet(&g, &Rhs::Constant(1.0), &SolveConfig::default()).unwrap();
        let text = log.to_json_lines();
        for line in text.lines() {
            let e: LogEntry = serde_json::from_str(line).unwrap();
            assert!(e.residual.is_finite());
        }
    }
}

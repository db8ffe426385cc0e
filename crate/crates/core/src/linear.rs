//! Matrix-free Krylov solvers with deterministic parallel reductions.

use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

/// Dot product summed in fixed chunks, so the result does not depend on scheduling.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> =
        a.par_chunks(CHUNK).zip(b.par_chunks(CHUNK)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect();
    parts.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.par_iter().map(|v| v.abs()).reduce(|| 0.0, f64::max)
}

/// `y += alpha * x`.
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += alpha * x);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Linear operator `y = A x` on unknown vectors.
pub type Operator<'a> = &'a (dyn Fn(&[f64], &mut [f64]) + Sync);

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite `A`.
pub fn conjugate_gradient(a: Operator, diag: &[f64], b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<KrylovStats> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut ax = vec![0.0; n];
    a(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rel = norm2(&r) / bnorm;
        if rel <= rtol {
            return Ok(KrylovStats { iterations: it, relative_residual: rel });
        }
        a(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver(format!("CG lost positive definiteness (p.Ap = {pap:e})")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        z.par_iter_mut().zip(r.par_iter().zip(diag.par_iter())).for_each(|(z, (r, d))| *z = r / d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(p, z)| *p = z + beta * *p);
    }
    let rel = norm2(&r) / bnorm;
    if rel <= rtol {
        Ok(KrylovStats { iterations: max_iter, relative_residual: rel })
    } else {
        Err(Error::LinearSolver(format!("CG did not converge in {max_iter} iterations (relative residual {rel:e})")))
    }
}

/// Right-preconditioned BiCGSTAB with a diagonal preconditioner, for nonsymmetric `A`.
pub fn bicgstab(a: Operator, diag: &[f64], b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<KrylovStats> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovStats { iterations: 0, relative_residual: 0.0 });
    }
    let precond = |v: &[f64], out: &mut [f64]| out.par_iter_mut().zip(v.par_iter().zip(diag.par_iter())).for_each(|(o, (v, d))| *o = v / d);
    let mut tmp = vec![0.0; n];
    a(x, &mut tmp);
    let mut r: Vec<f64> = b.iter().zip(&tmp).map(|(b, a)| b - a).collect();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let rel = norm2(&r) / bnorm;
        if rel <= rtol {
            return Ok(KrylovStats { iterations: it, relative_residual: rel });
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::LinearSolver(format!("BiCGSTAB breakdown at iteration {it}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut().zip(r.par_iter().zip(v.par_iter())).for_each(|(p, (r, v))| *p = r + beta * (*p - omega * v));
        precond(&p, &mut phat);
        a(&phat, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            return Err(Error::LinearSolver(format!("BiCGSTAB breakdown at iteration {it}")));
        }
        alpha = rho / r0v;
        axpy(-alpha, &v, &mut r);
        axpy(alpha, &phat, x);
        if norm2(&r) / bnorm <= rtol {
            return Ok(KrylovStats { iterations: it + 1, relative_residual: norm2(&r) / bnorm });
        }
        precond(&r, &mut shat);
        a(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
        axpy(omega, &shat, x);
        axpy(-omega, &t, &mut r);
    }
    let rel = norm2(&r) / bnorm;
    if rel <= rtol {
        Ok(KrylovStats { iterations: max_iter, relative_residual: rel })
    } else {
        Err(Error::LinearSolver(format!("BiCGSTAB did not converge in {max_iter} iterations (relative residual {rel:e})")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D Laplacian `2x_i - x_{i-1} - x_{i+1}` plus a skew convection term.
    fn op(skew: f64) -> impl Fn(&[f64], &mut [f64]) + Sync {
        move |x: &[f64], y: &mut [f64]| {
            let n = x.len();
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.0 * x[i] - l - r + skew * (r - l);
            }
        }
    }

    #[test]
    fn cg_solves_laplacian() {
        let a = op(0.0);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut b = vec![0.0; n];
        a(&xs, &mut b);
        let mut x = vec![0.0; n];
        let s = conjugate_gradient(&a, &vec![2.0; n], &b, &mut x, 1e-12, 1000).unwrap();
        assert!(s.relative_residual <= 1e-12);
        assert!(xs.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-8));
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let a = op(0.3);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.07).cos()).collect();
        let mut b = vec![0.0; n];
        a(&xs, &mut b);
        let mut x = vec![0.0; n];
        bicgstab(&a, &vec![2.0; n], &b, &mut x, 1e-12, 2000).unwrap();
        assert!(xs.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-8));
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let a = op(0.0);
        let b = vec![1.0; 500];
        let mut x = vec![0.0; 500];
        assert!(matches!(conjugate_gradient(&a, &vec![2.0; 500], &b, &mut x, 1e-14, 3), Err(Error::LinearSolver(_))));
    }

    #[test]
    fn dot_is_deterministic() {
        let a: Vec<f64> = (0..100_000).map(|i| (i as f64).sin()).collect();
        let d = dot(&a, &a);
        for _ in 0..5 {
            assert_eq!(dot(&a, &a).to_bits(), d.to_bits());
        }
    }
}

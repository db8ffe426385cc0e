//! Grid diagnostics used in interior Hessian estimates: the Guan–Qiu test
//! function and the doubling ratio of the Laplacian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{GridField, GridSpec};

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Interior nodes in the ball of radius `r` about the origin.
fn ball_nodes(spec: &GridSpec, r: f64, closed: bool) -> Vec<usize> {
    spec.interior_nodes()
        .into_iter()
        .filter(|&f| {
            let d = norm_sq(&spec.coord(f));
            if closed { d <= r * r } else { d < r * r }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuanQiuField {
    pub spec: GridSpec,
    /// `P` at interior nodes with `|x| < 3`; `None` elsewhere.
    pub values: Vec<Option<f64>>,
    pub argmax: Vec<usize>,
    pub max: f64,
    /// The normalisation `max_{B_1} Delta u` that was used.
    pub ref_max: f64,
}

/// `P = 2 ln(9 - |x|^2) + alpha |Du|^2/2 + beta (x.Du - u) + ln max{ln(Delta u / ref), 1/gamma}`
/// with central differences. `ref_max` defaults to the grid maximum of `Delta_h u` on `B_1`.
pub fn guan_qiu_p(u: &GridField, alpha: f64, beta: f64, gamma: f64, ref_max: Option<f64>) -> Result<GuanQiuField> {
    if !(gamma > 0.0) {
        return domain(format!("gamma must be positive, got {gamma}"));
    }
    let spec = &u.spec;
    let interior = spec.interior_nodes();
    if let Some(&f) = interior.iter().find(|&&f| !(u.laplacian(f) > 0.0)) {
        return Err(Error::Branch(format!("Delta_h u = {:e} <= 0 at node {:?}", u.laplacian(f), spec.multi(f))));
    }
    let ref_max = match ref_max {
        Some(r) if r > 0.0 => r,
        Some(r) => return domain(format!("reference maximum must be positive, got {r}")),
        None => {
            let b1 = ball_nodes(spec, 1.0, true);
            if b1.is_empty() {
                return Err(Error::Resolution("no interior node in B_1".into()));
            }
            b1.iter().map(|&f| u.laplacian(f)).fold(f64::NEG_INFINITY, f64::max)
        }
    };
    let values: Vec<Option<f64>> = (0..spec.len())
        .into_par_iter()
        .map(|f| {
            let x = spec.coord(f);
            let r2 = norm_sq(&x);
            if !spec.is_interior(f) || r2 >= 9.0 {
                return None;
            }
            let du = u.gradient(f);
            let xdu: f64 = x.iter().zip(&du).map(|(a, b)| a * b).sum();
            let loglog = (u.laplacian(f) / ref_max).ln().max(1.0 / gamma);
            Some(2.0 * (9.0 - r2).ln() + 0.5 * alpha * norm_sq(&du) + beta * (xdu - u.values[f]) + loglog.ln())
        })
        .collect();
    let (best, max) = values
        .iter()
        .enumerate()
        .filter_map(|(f, v)| v.map(|v| (f, v)))
        .fold((None, f64::NEG_INFINITY), |(bf, bv), (f, v)| if v > bv { (Some(f), v) } else { (bf, bv) });
    let best = best.ok_or_else(|| Error::Resolution("no interior node with |x| < 3".into()))?;
    Ok(GuanQiuField { spec: spec.clone(), values, argmax: spec.multi(best), max, ref_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub ratio: f64,
    pub max_outer: f64,
    pub max_inner: f64,
    /// `max |Du_h|` over interior nodes of `B_3`.
    pub lipschitz_b3: f64,
}

/// `max_{B_2} Delta_h u / max_{B_r} Delta_h u`.
pub fn doubling_ratio(u: &GridField, r: f64) -> Result<DoublingReport> {
    if !(r > 0.0 && r < 2.0) {
        return domain(format!("inner radius must lie in (0, 2), got {r}"));
    }
    let spec = &u.spec;
    let lap_max = |nodes: &[usize]| nodes.iter().map(|&f| u.laplacian(f)).fold(f64::NEG_INFINITY, f64::max);
    let inner = ball_nodes(spec, r, true);
    if inner.is_empty() {
        return Err(Error::Resolution(format!("ball of radius {r} contains no interior node")));
    }
    let outer = ball_nodes(spec, 2.0, true);
    let max_inner = lap_max(&inner);
    let max_outer = lap_max(&outer);
    if !(max_inner > 0.0) {
        return Err(Error::Branch(format!("max of Delta_h u on B_r is {max_inner:e}")));
    }
    let lipschitz_b3 = ball_nodes(spec, 3.0, false).iter().map(|&f| norm_sq(&u.gradient(f)).sqrt()).fold(0.0, f64::max);
    Ok(DoublingReport { ratio: max_outer / max_inner, max_outer, max_inner, lipschitz_b3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{zoo_eval, ClosedFormSolution};

    fn paraboloid(h: f64) -> GridField {
        GridField::from_fn(GridSpec::cube(3, -3.0, 3.0, h).unwrap(), |x| 0.5 * norm_sq(x))
    }

    #[test]
    fn paraboloid_value_at_origin() {
        let u = paraboloid(0.5);
        let p = guan_qiu_p(&u, 0.0, 0.0, 0.1, None).unwrap();
        assert!((p.ref_max - 3.0).abs() < 1e-12);
        let centre = u.spec.flat(&[6, 6, 6]);
        let expect = 2.0 * 9f64.ln() + 10f64.ln();
        assert!((p.values[centre].unwrap() - expect).abs() < 1e-12);
        assert_eq!(p.argmax, vec![6, 6, 6]);
    }

    #[test]
    fn gradient_term_is_alpha_r2_over_two() {
        let u = paraboloid(0.5);
        let a = guan_qiu_p(&u, 0.0, 0.0, 0.1, None).unwrap();
        let b = guan_qiu_p(&u, 0.7, 0.0, 0.1, None).unwrap();
        for f in 0..u.spec.len() {
            if let (Some(x), Some(y)) = (a.values[f], b.values[f]) {
                assert!((y - x - 0.35 * norm_sq(&u.spec.coord(f))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warren_field_is_finite() {
        let w = ClosedFormSolution::Warren { n: 3 };
        let u = GridField::from_fn(GridSpec::cube(3, -3.0, 3.0, 0.25).unwrap(), |x| zoo_eval(&w, x, 0).unwrap().value);
        let p = guan_qiu_p(&u, 0.5, 0.1, 0.1, None).unwrap();
        assert!(p.max.is_finite());
        assert!(p.values.iter().flatten().all(|v| v.is_finite()));
        let d = doubling_ratio(&u, 0.5).unwrap();
        assert!(d.ratio >= 1.0 && d.ratio.is_finite());
        assert!(d.lipschitz_b3 > 0.0);
    }

    #[test]
    fn negative_laplacian_is_branch_error() {
        let u = GridField::from_fn(GridSpec::cube(2, -3.0, 3.0, 0.5).unwrap(), |x| -norm_sq(x));
        assert!(matches!(guan_qiu_p(&u, 0.0, 0.0, 1.0, None), Err(Error::Branch(_))));
    }

    #[test]
    fn doubling_examples() {
        let u = paraboloid(0.5);
        assert_eq!(doubling_ratio(&u, 1.0).unwrap().ratio, 1.0);
        assert!(doubling_ratio(&u, 2.0).is_err());
        let coarse = GridField::from_fn(GridSpec::cube(2, -2.5, 2.5, 1.0).unwrap(), |x| 0.5 * norm_sq(x));
        assert!(matches!(doubling_ratio(&coarse, 0.1), Err(Error::Resolution(_))));
    }
}

//! Derivative-free local minimization.

/// Outcome of a Nelder–Mead run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Nelder–Mead with standard coefficients, stopping after `max_evals`
/// evaluations or when the simplex collapses. Non-finite values act as walls.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize) -> Minimum {
    let d = x0.len();
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..d {
        if evals >= max_evals {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    if simplex.len() < d + 1 {
        return best_of(simplex, evals);
    }
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < 1e-12 || (spread.is_finite() && spread.abs() < 1e-16 && size < 1e-6) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * (simplex[d].0[j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let vr = eval(&xr, &mut evals);
        if vr < simplex[0].1 {
            let xe = along(-2.0);
            let ve = if evals < max_evals { eval(&xe, &mut evals) } else { f64::INFINITY };
            simplex[d] = if ve < vr { (xe, ve) } else { (xr, vr) };
        } else if vr < simplex[d - 1].1 {
            simplex[d] = (xr, vr);
        } else {
            let (xc, vc) = if vr < simplex[d].1 {
                let xc = along(-0.5);
                let vc = eval(&xc, &mut evals);
                (xc, vc)
            } else {
                let xc = along(0.5);
                let vc = eval(&xc, &mut evals);
                (xc, vc)
            };
            if vc < simplex[d].1.min(vr) {
                simplex[d] = (xc, vc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    if evals >= max_evals {
                        break;
                    }
                    let x: Vec<f64> = s.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let v = eval(&x, &mut evals);
                    *s = (x, v);
                }
            }
        }
    }
    best_of(simplex, evals)
}

fn best_of(simplex: Vec<(Vec<f64>, f64)>, evaluations: usize) -> Minimum {
    let (x, value) = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty simplex");
    Minimum { x, value, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(&f, &[-1.2, 1.0], 0.5, 5000);
        assert!(m.value < 1e-10, "{}", m.value);
        assert!(m.evaluations <= 5000);
    }

    #[test]
    fn respects_budget_and_walls() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 0.3).powi(2) + x[1].powi(2) };
        let m = nelder_mead(&f, &[2.0, 1.0], 1.0, 40);
        assert!(m.evaluations <= 41);
        assert!(m.value.is_finite());
    }
}

//! Cross-module pipelines: solver output fed to the transform, weak form and file formats.

use crate::grid::{GridField, GridSpec};
use crate::legendre::ll_grid_transform;
use crate::solver::{solve_dirichlet, Rhs, SolveConfig};
use crate::weak::{very_weak_residual, TestFunction};

fn skew_quadratic(x: &[f64]) -> f64 {
    // Diagonal Hessian (2, 1/2): sigma_2 = 1.
    x[0] * x[0] + 0.25 * x[1] * x[1]
}

#[test]
fn solved_quadratic_transforms_by_the_eigenvalue_law() {
    let spec = GridSpec::cube(2, -1.0, 1.0, 0.125).unwrap();
    let g = GridField::from_fn(spec, skew_quadratic);
    let (u, _) = solve_dirichlet(&g, &Rhs::Constant(1.0), &SolveConfig::default()).unwrap();
    let k = 1.0;
    let t = ll_grid_transform(&u, k).unwrap();
    assert_eq!(t.unconverged, 0);
    // mu = 1/(2 + 1), 1/(1/2 + 1).
    let (m1, m2) = (1.0 / 3.0, 2.0 / 3.0);
    let ws = &t.w.spec;
    let mut checked = 0;
    for f in ws.interior_nodes() {
        let neighbours = [f + ws.stride(0), f - ws.stride(0), f + ws.stride(1), f - ws.stride(1)];
        if t.inside[f] && neighbours.iter().all(|&g| t.inside[g]) {
            let h = t.w.hessian(f);
            assert!((h[(0, 0)] - m1).abs() < 1e-8 && (h[(1, 1)] - m2).abs() < 1e-8, "{h}");
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn solved_field_satisfies_the_weak_form() {
    let spec = GridSpec::cube(2, -1.0, 1.0, 1.0 / 32.0).unwrap();
    let g = GridField::from_fn(spec, skew_quadratic);
    let (u, _) = solve_dirichlet(&g, &Rhs::Constant(1.0), &SolveConfig::default()).unwrap();
    let phi = TestFunction::new(vec![0.0, 0.0], vec![0.5, 0.5], 1.0).unwrap();
    let mass: f64 = {
        let s = &u.spec;
        (0..s.len()).map(|f| phi.value(&s.coord(f))).sum::<f64>() * s.spacing[0] * s.spacing[1]
    };
    let r = very_weak_residual(&u, &phi).unwrap();
    assert!(r.abs() < 1e-4 * mass, "{r}");
}

#[test]
fn grid_files_roundtrip_through_disk() {
    let dir = std::env::temp_dir().join(format!("sigma2-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let g = GridField::from_fn(GridSpec::cube(3, -0.5, 0.5, 0.25).unwrap(), |x| x[0] * x[1] - x[2].exp());
    let bin = dir.join("g.bin");
    g.write_binary(std::fs::File::create(&bin).unwrap()).unwrap();
    let back = GridField::read_binary(std::fs::File::open(&bin).unwrap()).unwrap();
    assert_eq!(back, g);
    let bytes = std::fs::read(&bin).unwrap();
    assert_eq!(bytes.len(), 8 + 4 + 4 + 3 * 8 + 6 * 8 + g.values.len() * 8);

    let csv = dir.join("g.csv");
    g.write_csv(std::fs::File::create(&csv).unwrap()).unwrap();
    let back = GridField::read_csv(std::io::BufReader::new(std::fs::File::open(&csv).unwrap())).unwrap();
    assert_eq!(back.spec.shape, g.spec.shape);
    assert!(back.values.iter().zip(&g.values).all(|(a, b)| (a - b).abs() <= 1e-15 * (1.0 + b.abs())));
    std::fs::remove_dir_all(&dir).unwrap();
}

//! `sigma2`: command-line front end for the sigma2-core toolkit.
//!
//! Exit codes: 0 success, 1 usage or domain error, 2 invariant violation (the report is still written).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use sigma2_core::grid::{GridField, GridSpec};
use sigma2_core::jacobi::{certified_min_gap, doubling_ratio, guan_qiu_p, manifold_scan, JacobiQuantity, ScanDomain};
use sigma2_core::legendre::ll_grid_transform;
use sigma2_core::nitsche::{conjugate_functions, heinz_potential, jorgens_chain, maximal_residual, minimal_jacobi_equality, MinimalGraph2D};
use sigma2_core::report::Report;
use sigma2_core::solver::{convergence_study, solve_dirichlet, Rhs, SolveConfig};
use sigma2_core::spectrum::{min_ratio, Spectrum, SymMatrix};
use sigma2_core::weak::{hessian_mass, singular_approach, very_weak_residual, TestFunction};
use sigma2_core::zoo::{branch_jump_profile, loglog_slope, resolve_li_singular, residual_scan, zoo_eval, LiSingularParams, SampleBox};
use sigma2_core::ClosedFormSolution;

#[derive(Parser, Debug)]
#[command(name = "sigma2", version, about = "Numerical experiments for the quadratic Hessian equation sigma_2(D^2 u) = 1")]
struct Cli {
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a closed-form solution and check sigma_2(D^2 u) = 1.
    VerifyZoo(VerifyZoo),
    /// Seeded search for the worst Jacobi-inequality gap on the positive branch.
    JacobiScan(JacobiScan),
    /// Certified minimum Jacobi gap at one spectrum.
    Certify(Certify),
    /// Legendre-Lewy transform of a grid field.
    Transform(Transform),
    /// Newton solve of the Dirichlet problem on a box.
    Solve(Solve),
    /// Very weak residual of sampled data against a bump.
    Weakform(Weakform),
    /// Conjugate functions, Heinz potential and the maximal/Joergens chain of a minimal graph.
    Nitsche(Nitsche),
    /// Doubling ratio and optional Guan-Qiu quantity of a grid field.
    Doubling(Doubling),
    /// Resolve the parameters of the singular family and report its branch jump.
    ResolveLi(ResolveLi),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Quantity {
    /// ln(trace + nK)
    ShiftedTrace,
    /// ln(trace)
    Logtrace,
    /// ln(lambda_max + K)
    LogLambdaMax,
    /// ln(trace) with coefficient c_n + lambda_min/trace
    Almost,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Expect {
    /// Worst gap must be >= -1e-8.
    Nonnegative,
    /// A negative gap must be found.
    Violation,
}

#[derive(Args, Debug)]
struct QuantityArgs {
    #[arg(long, value_enum, default_value = "logtrace")]
    quantity: Quantity,
    /// Shift K used by shifted-trace and log-lambda-max.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Override the default coefficient.
    #[arg(long)]
    kappa: Option<f64>,
}

impl QuantityArgs {
    fn build(&self) -> JacobiQuantity {
        let q = match self.quantity {
            Quantity::ShiftedTrace => JacobiQuantity::shifted_trace(self.k),
            Quantity::Logtrace => JacobiQuantity::log_trace(),
            Quantity::LogLambdaMax => JacobiQuantity::log_lambda_max(self.k),
            Quantity::Almost => JacobiQuantity::almost_jacobi(),
        };
        match self.kappa {
            Some(k) => q.with_kappa(k),
            None => q,
        }
    }
}

#[derive(Args, Debug)]
struct VerifyZoo {
    /// warren, li-nondegenerate, li-singular, li-singular-printed, or quadratic:a1,a2,...
    #[arg(long)]
    solution: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Half-width of the sampling cube.
    #[arg(long = "box", default_value_t = 2.0)]
    half: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args, Debug)]
struct JacobiScan {
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    quantity: QuantityArgs,
    /// Restrict to lambda_min >= -K.
    #[arg(long)]
    semiconvex: bool,
    /// Keep only spectra with c_n + lambda_min/trace >= 0.
    #[arg(long)]
    dynamic_only: bool,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum)]
    expect: Option<Expect>,
}

#[derive(Args, Debug)]
struct Certify {
    /// On-branch eigenvalues, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    lambda: Vec<f64>,
    #[command(flatten)]
    quantity: QuantityArgs,
    #[arg(long, value_enum)]
    expect: Option<Expect>,
}

#[derive(Args, Debug)]
struct FieldSource {
    /// Grid file: binary container, or CSV when the extension is `.csv`.
    #[arg(long, conflicts_with = "solution")]
    input: Option<PathBuf>,
    /// Sample a closed-form solution instead of reading a file.
    #[arg(long)]
    solution: Option<String>,
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Sampling box [-half, half]^n.
    #[arg(long, default_value_t = 0.5)]
    half: f64,
    #[arg(long, default_value_t = 0.0625)]
    h: f64,
}

impl FieldSource {
    fn load(&self) -> Result<GridField, String> {
        match (&self.input, &self.solution) {
            (Some(p), _) => read_grid(p),
            (None, Some(name)) => {
                let s = parse_solution(name, self.n)?;
                let spec = GridSpec::cube(s.dim(), -self.half, self.half, self.h).map_err(err)?;
                sample(&s, spec)
            }
            (None, None) => Err("either --input or --solution is required".into()),
        }
    }
}

#[derive(Args, Debug)]
struct Transform {
    #[command(flatten)]
    source: FieldSource,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Write the transformed field here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Largest accepted round-trip error.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct Solve {
    #[arg(long)]
    dim: usize,
    /// quadratic:a1,...,an (diagonal, sigma_2(a) = 1) or warren.
    #[arg(long)]
    boundary: String,
    /// Mesh widths; more than one runs a convergence study.
    #[arg(long, value_delimiter = ',', required = true)]
    h: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    lower: f64,
    #[arg(long, default_value_t = 1.0)]
    upper: f64,
    #[arg(long, default_value_t = 50)]
    max_newton: usize,
    #[arg(long, default_value_t = 1e-10)]
    residual_tol: f64,
    /// Largest accepted max-norm error against the exact solution.
    #[arg(long)]
    tol: Option<f64>,
    /// Smallest accepted observed order in a convergence study.
    #[arg(long)]
    min_order: Option<f64>,
    /// Write the solution (single h) here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the Newton log (single h) as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the convergence table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Weakform {
    /// Closed-form solution sampled on the grid; `paraboloid` is |x|^2/2.
    #[arg(long, default_value = "paraboloid")]
    solution: String,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    half: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.125,0.0625,0.03125")]
    h: Vec<f64>,
    /// Bump center (defaults to the origin).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    center: Vec<f64>,
    /// Bump radius per axis, or one value for all axes.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    radius: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long)]
    min_order: Option<f64>,
    /// Also report the Hessian mass on the unit ball at the finest h.
    #[arg(long)]
    mass: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Nitsche {
    /// scherk or plane:a1,a2,c
    #[arg(long, default_value = "scherk")]
    surface: String,
    #[arg(long, default_value_t = 1.0)]
    half: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.015625,0.0078125,0.00390625")]
    h: Vec<f64>,
    /// Also run the Legendre-Lewy step and check Delta_h w = 1.
    #[arg(long)]
    jorgens: bool,
}

#[derive(Args, Debug)]
struct Doubling {
    #[command(flatten)]
    source: FieldSource,
    #[arg(long, default_value_t = 0.2)]
    r: f64,
    /// alpha,beta,gamma for the Guan-Qiu quantity.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    guan_qiu: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ResolveLi {
    /// Also report Delta u of the printed coefficients along the same path.
    #[arg(long)]
    printed_profile: bool,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse_solution(name: &str, n: usize) -> Result<ClosedFormSolution, String> {
    if let Some(rest) = name.strip_prefix("quadratic:") {
        let d: Vec<f64> = rest.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad coefficient {v:?}: {e}"))).collect::<Result<_, _>>()?;
        return Ok(ClosedFormSolution::Quadratic(SymMatrix::from_diagonal(&d)));
    }
    Ok(match name {
        "warren" => ClosedFormSolution::Warren { n },
        "li-nondegenerate" => ClosedFormSolution::LiNondegenerate { n },
        "li-singular" => ClosedFormSolution::LiSingular(resolve_li_singular().map_err(err)?.resolved),
        "li-singular-printed" => ClosedFormSolution::LiSingular(LiSingularParams::printed()),
        "paraboloid" => ClosedFormSolution::Quadratic(SymMatrix::identity(n)),
        _ => return Err(format!("unknown solution {name:?}")),
    })
}

fn parse_surface(s: &str) -> Result<MinimalGraph2D, String> {
    if s == "scherk" {
        return Ok(MinimalGraph2D::Scherk);
    }
    let rest = s.strip_prefix("plane:").ok_or_else(|| format!("unknown surface {s:?}"))?;
    let v: Vec<f64> = rest.split(',').map(|v| v.trim().parse::<f64>().map_err(err)).collect::<Result<_, _>>()?;
    match v[..] {
        [a1, a2, c] => Ok(MinimalGraph2D::Plane { a: [a1, a2], c }),
        _ => Err("plane needs a1,a2,c".into()),
    }
}

fn sample(s: &ClosedFormSolution, spec: GridSpec) -> Result<GridField, String> {
    let values = (0..spec.len()).map(|f| zoo_eval(s, &spec.coord(f), 0).map(|d| d.value)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    GridField::new(spec, values).map_err(err)
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_grid(p: &Path) -> Result<GridField, String> {
    let f = File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
    let r = BufReader::new(f);
    if is_csv(p) { GridField::read_csv(r) } else { GridField::read_binary(r) }.map_err(err)
}

fn write_grid(g: &GridField, p: &Path) -> Result<(), String> {
    let mut w = BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?);
    if is_csv(p) { g.write_csv(&mut w) } else { g.write_binary(&mut w) }.map_err(err)?;
    w.flush().map_err(err)
}

fn write_text(p: &Path, s: &str) -> Result<(), String> {
    std::fs::write(p, s).map_err(|e| format!("{}: {e}", p.display()))
}

fn orders(rows: &[(f64, f64)]) -> Vec<f64> {
    rows.windows(2).map(|w| (w[0].1.abs() / w[1].1.abs()).ln() / (w[0].0 / w[1].0).ln()).collect()
}

fn max_err(a: &GridField, b: &GridField) -> f64 {
    a.values.iter().zip(&b.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn check_expect(report: &mut Report, expect: Option<Expect>, gap: f64) {
    match expect {
        Some(Expect::Nonnegative) if gap < -1e-8 => report.violations.push(format!("worst gap {gap:e} < -1e-8")),
        Some(Expect::Violation) if gap >= 0.0 => report.violations.push(format!("expected a negative gap, worst is {gap:e}")),
        _ => {}
    }
}

fn run(cmd: &Command, report: &mut Report) -> Result<(), String> {
    match cmd {
        Command::VerifyZoo(a) => {
            let s = parse_solution(&a.solution, a.n)?;
            report.seed = Some(a.seed);
            report.budgets.insert("samples".into(), a.samples as u64);
            let r = residual_scan(&s, &SampleBox::cube(s.dim(), a.half), a.samples, a.seed).map_err(err)?;
            if r.max_abs_residual > a.tol {
                report.violations.push(format!("max |sigma_2 - 1| = {:e} exceeds {:e}", r.max_abs_residual, a.tol));
            }
            report.results = json!({ "solution": s.name(), "n": s.dim(), "scan": r });
        }
        Command::JacobiScan(a) => {
            let q = a.quantity.build();
            let mut dom = if a.semiconvex { ScanDomain::semiconvex(a.quantity.k) } else { ScanDomain::whole_branch() };
            if a.dynamic_only {
                dom = dom.dynamic_only();
            }
            report.seed = Some(a.seed);
            report.budgets.insert("evaluations".into(), a.budget as u64);
            let r = manifold_scan(a.n, &q, &dom, a.budget, a.seed).map_err(err)?;
            check_expect(report, a.expect, r.worst.min_gap);
            report.results = json!({ "domain": dom, "violation_found": r.worst.min_gap < 0.0, "scan": r });
        }
        Command::Certify(a) => {
            let lam = Spectrum::new(a.lambda.clone()).map_err(err)?;
            let c = certified_min_gap(&lam, &a.quantity.build()).map_err(err)?;
            let ratio = min_ratio(&lam).map_err(err)?;
            check_expect(report, a.expect, c.min_gap);
            report.results = json!({ "certificate": c, "ratio": ratio });
        }
        Command::Transform(a) => {
            let u = a.source.load()?;
            let t = ll_grid_transform(&u, a.k).map_err(err)?;
            if t.unconverged > 0 {
                report.violations.push(format!("{} nodes did not converge", t.unconverged));
            }
            if let Some(tol) = a.tol.filter(|tol| !(t.roundtrip_err <= *tol)) {
                report.violations.push(format!("round-trip error {:e} exceeds {tol:e}", t.roundtrip_err));
            }
            if let Some(p) = &a.output {
                write_grid(&t.w, p)?;
            }
            report.results = json!({
                "k": a.k,
                "target": t.w.spec,
                "inside": t.inside.iter().filter(|&&i| i).count(),
                "roundtrip_err": t.roundtrip_err,
                "unconverged": t.unconverged,
            });
        }
        Command::Solve(a) => solve(a, report)?,
        Command::Weakform(a) => {
            let s = parse_solution(&a.solution, a.n)?;
            let n = s.dim();
            let center = if a.center.is_empty() { vec![0.0; n] } else { a.center.clone() };
            let radii = if a.radius.len() == 1 { vec![a.radius[0]; n] } else { a.radius.clone() };
            let phi = TestFunction::new(center, radii, a.amplitude).map_err(err)?;
            let mut rows = Vec::new();
            let mut finest = None;
            for &h in &a.h {
                let u = sample(&s, GridSpec::cube(n, -a.half, a.half, h).map_err(err)?)?;
                rows.push((h, very_weak_residual(&u, &phi).map_err(err)?));
                finest = Some(u);
            }
            let ord = orders(&rows);
            if let (Some(m), Some(p)) = (a.min_order, ord.last()) {
                if !(*p >= m) {
                    report.violations.push(format!("observed order {p:.3} below {m}"));
                }
            }
            if let Some(p) = &a.csv {
                let mut s = String::from("h,residual\n");
                rows.iter().for_each(|(h, r)| s.push_str(&format!("{h:e},{r:e}\n")));
                write_text(p, &s)?;
            }
            let mass = match (a.mass, &finest) {
                (true, Some(u)) => Some(hessian_mass(u).map_err(err)?),
                _ => None,
            };
            report.results = json!({ "solution": s.name(), "bump": phi, "rows": rows, "orders": ord, "mass": mass });
        }
        Command::Nitsche(a) => {
            let mg = parse_surface(&a.surface)?;
            let mut rows = Vec::new();
            let mut det = Vec::new();
            let mut maximal = Vec::new();
            let mut jor = Vec::new();
            for &h in &a.h {
                let spec = GridSpec::cube(2, -a.half, a.half, h).map_err(err)?;
                let c = conjugate_functions(&mg, &spec).map_err(err)?;
                let hz = heinz_potential(&mg, &spec).map_err(err)?;
                let m = maximal_residual(&mg, &spec).map_err(err)?;
                let eq = minimal_jacobi_equality(&mg, &spec).map_err(err)?;
                if c.path_err > 1e-6 {
                    report.violations.push(format!("h={h}: conjugate path error {:e} exceeds 1e-6", c.path_err));
                }
                if !(m.max_grad_norm < 1.0) {
                    report.violations.push(format!("h={h}: Lorentz bound fails, |Df*| = {}", m.max_grad_norm));
                }
                if m.identity_err > 1e-8 {
                    report.violations.push(format!("h={h}: metric identity error {:e}", m.identity_err));
                }
                let j = if a.jorgens { Some(jorgens_chain(&mg, &spec).map_err(err)?) } else { None };
                det.push((h, hz.det_residual));
                maximal.push((h, m.residual));
                if let Some(j) = &j {
                    jor.push((h, j.max_dev));
                }
                rows.push(json!({
                    "h": h,
                    "path_err": c.path_err,
                    "heinz_det_residual": hz.det_residual,
                    "heinz_metric_err": hz.metric_err,
                    "maximal": m,
                    "minimal_jacobi_equality": eq,
                    "jorgens": j,
                }));
            }
            report.results = json!({
                "surface": mg,
                "rows": rows,
                "det_orders": orders(&det),
                "maximal_orders": orders(&maximal),
                "jorgens_orders": orders(&jor),
            });
        }
        Command::Doubling(a) => {
            let u = a.source.load()?;
            let d = doubling_ratio(&u, a.r).map_err(err)?;
            let gq = match &a.guan_qiu {
                Some(p) if p.len() != 3 => return Err("--guan-qiu takes alpha,beta,gamma".into()),
                Some(p) => {
                    let g = guan_qiu_p(&u, p[0], p[1], p[2], None).map_err(err)?;
                    Some(json!({ "max": g.max, "argmax": g.argmax, "ref_max": g.ref_max }))
                }
                None => None,
            };
            report.results = json!({ "doubling": d, "guan_qiu": gq });
        }
        Command::ResolveLi(a) => {
            let r = resolve_li_singular().map_err(err)?;
            if !r.resolved_residual.is_empty() {
                report.violations.push(format!("{} monomials survive for the resolved parameters", r.resolved_residual.len()));
            }
            let path = singular_approach();
            let profile = branch_jump_profile(&r.resolved, &path).map_err(err)?;
            let slope = loglog_slope(&profile).map_err(err)?;
            if (slope + 1.4).abs() > 0.05 {
                report.violations.push(format!("branch-jump slope {slope} is not -1.4 +/- 0.05"));
            }
            let across = branch_jump_profile(&r.resolved, &[-1e-3, 1e-3]).map_err(err)?;
            let sign_change = across[0].1.signum() != across[1].1.signum();
            if !sign_change {
                report.violations.push("no sign change of Delta u across the singular set".into());
            }
            let printed = if a.printed_profile { Some(branch_jump_profile(&LiSingularParams::printed(), &path).map_err(err)?) } else { None };
            report.results = json!({
                "resolution": r,
                "slope": slope,
                "profile": profile,
                "across": across,
                "sign_change": sign_change,
                "printed_profile": printed,
            });
        }
    }
    Ok(())
}

fn solve(a: &Solve, report: &mut Report) -> Result<(), String> {
    let s = parse_solution(&a.boundary, a.dim)?;
    if s.dim() != a.dim {
        return Err(format!("boundary data {} lives in {} dimensions, not {}", s.name(), s.dim(), a.dim));
    }
    let cfg = SolveConfig { max_newton_iters: a.max_newton, residual_tol: a.residual_tol, ..SolveConfig::default() };
    report.budgets.insert("max_newton_iters".into(), a.max_newton as u64);
    let (lo, hi) = (vec![a.lower; a.dim], vec![a.upper; a.dim]);
    if a.h.len() > 1 {
        let rows = convergence_study(&s, &lo, &hi, &a.h, &cfg).map_err(err)?;
        let errs: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.max_error)).collect();
        let ord = orders(&errs);
        if let Some(m) = a.min_order {
            if let Some(p) = ord.iter().find(|p| !(**p >= m)) {
                report.violations.push(format!("observed order {p:.3} below {m}"));
            }
        }
        if let Some(t) = a.tol {
            if let Some(r) = rows.last().filter(|r| r.max_error > t) {
                report.violations.push(format!("error {:e} at h={} exceeds {t:e}", r.max_error, r.h));
            }
        }
        if let Some(p) = &a.csv {
            let mut s = String::from("h,max_error,newton_iterations\n");
            rows.iter().for_each(|r| s.push_str(&format!("{:e},{:e},{}\n", r.h, r.max_error, r.newton_iterations)));
            write_text(p, &s)?;
        }
        report.results = json!({ "boundary": s.name(), "config": cfg, "rows": rows, "orders": ord });
        return Ok(());
    }
    let spec = GridSpec::from_box(&lo, &hi, a.h[0]).map_err(err)?;
    let exact = sample(&s, spec)?;
    let (u, log) = solve_dirichlet(&exact, &Rhs::Constant(1.0), &cfg).map_err(err)?;
    let e = max_err(&u, &exact);
    if !log.is_monotone() {
        report.violations.push("Newton residual increased".into());
    }
    if log.entries.iter().any(|e| !(e.min_laplacian > 0.0) || !(e.min_coefficient_eig > 0.0)) {
        report.violations.push("branch guard or coefficient positivity failed at an accepted iterate".into());
    }
    if let Some(t) = a.tol {
        if !(e <= t) {
            report.violations.push(format!("error {e:e} exceeds {t:e}"));
        }
    }
    if let Some(p) = &a.output {
        write_grid(&u, p)?;
    }
    if let Some(p) = &a.log {
        write_text(p, &log.to_json_lines())?;
    }
    report.results = json!({
        "boundary": s.name(),
        "config": cfg,
        "h": a.h[0],
        "max_error": e,
        "final_residual": log.final_residual(),
        "newton_iterations": log.entries.len().saturating_sub(1),
    });
    Ok(())
}

fn digest(cmd: &Command) -> String {
    hex::encode(Sha256::digest(format!("{cmd:?}").as_bytes()))
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::VerifyZoo(_) => "verify-zoo",
        Command::JacobiScan(_) => "jacobi-scan",
        Command::Certify(_) => "certify",
        Command::Transform(_) => "transform",
        Command::Solve(_) => "solve",
        Command::Weakform(_) => "weakform",
        Command::Nitsche(_) => "nitsche",
        Command::Doubling(_) => "doubling",
        Command::ResolveLi(_) => "resolve-li",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let start = Instant::now();
    let mut report = Report::new(command_name(&cli.command), digest(&cli.command));
    if let Err(e) = run(&cli.command, &mut report) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    let text = match report.to_json() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match &cli.report {
        Some(p) => {
            if let Err(e) = write_text(p, &text) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
        None => {
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }
    if report.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        ExitCode::from(2)
    }
}

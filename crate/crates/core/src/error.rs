use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is not symmetric: entries ({i},{j}) differ by {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },
    #[error("semiconvexity violated: lambda_min = {lambda_min}, lambda_min + K = {margin:e}")]
    Semiconvexity { lambda_min: f64, margin: f64 },
    #[error("branch error: {0}")]
    Branch(String),
    #[error("constraint violation: residual {0:e}")]
    Constraint(f64),
    #[error("degenerate top eigenvalue: gap {0:e} below 1e-7")]
    DegenerateEigenvalue(f64),
    #[error("sampling failed after {0} rejected attempts")]
    Sampling(usize),
    #[error("discrete convexity fails at node {node:?} (smallest eigenvalue {min_eig:e})")]
    Convexity { node: Vec<usize>, min_eig: f64 },
    #[error("branch guard tripped at node {node:?}: discrete Laplacian {laplacian:e}")]
    BranchLeft { node: Vec<usize>, laplacian: f64 },
    #[error("Newton iteration stalled after {iterations} iterations at residual {residual:e}")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("linear solver breakdown: {0}")]
    LinearSolver(String),
    #[error("rank-deficient sample set: rank {rank} < {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("integrability check failed: symmetric-derivative mismatch {0:e}")]
    Integrability(f64),
    #[error("Lorentz gradient bound violated at node {node:?}: |Df*| = {norm}")]
    Lorentz { node: Vec<usize>, norm: f64 },
    #[error("grid resolution too coarse: {0}")]
    Resolution(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

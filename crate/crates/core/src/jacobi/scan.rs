//! Global searches for the worst certified gap over the level set `sigma_2 = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{certified_min_gap, GapCertificate, JacobiQuantity};
use crate::error::{domain, Error, Result};
use crate::optim::nelder_mead;
use crate::spectrum::{complete_on_branch, min_ratio, sample_on_branch, Spectrum};

const FLOOR_MARGIN: f64 = 1e-6;

/// Which part of the positive branch is searched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanDomain {
    /// `Some(K)` restricts to `lambda_min >= -K + 1e-6`.
    pub semiconvex: Option<f64>,
    /// Keep only spectra with `c_n + lambda_min / trace >= 0`.
    pub dynamic_only: bool,
}

impl ScanDomain {
    pub fn whole_branch() -> Self {
        Self { semiconvex: None, dynamic_only: false }
    }

    pub fn semiconvex(k: f64) -> Self {
        Self { semiconvex: Some(k), dynamic_only: false }
    }

    pub fn dynamic_only(mut self) -> Self {
        self.dynamic_only = true;
        self
    }

    /// Free eigenvalues `lambda_2..lambda_n` from unconstrained coordinates.
    fn spectrum(&self, z: &[f64]) -> Option<Spectrum> {
        let rest: Vec<f64> = match self.semiconvex {
            Some(k) => z.iter().map(|z| -k + FLOOR_MARGIN + z.exp()).collect(),
            None => z.iter().map(|z| z.sinh()).collect(),
        };
        let v = complete_on_branch(&rest)?;
        if let Some(k) = self.semiconvex {
            if v[0] < -k + FLOOR_MARGIN {
                return None;
            }
        }
        let s = Spectrum::new(v).ok()?;
        if self.dynamic_only && !min_ratio(&s).ok()?.dynamic_ok {
            return None;
        }
        Some(s)
    }

    fn probe_range(&self) -> (f64, f64) {
        match self.semiconvex {
            Some(_) => (-7.0, 5.0),
            None => (-5.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub worst: GapCertificate,
    pub evaluations: usize,
    pub random_probes: usize,
    pub local_starts: usize,
}

fn objective(dom: &ScanDomain, q: &JacobiQuantity, z: &[f64]) -> f64 {
    match dom.spectrum(z) {
        Some(s) => certified_min_gap(&s, q).map_or(f64::INFINITY, |c| c.min_gap),
        None => f64::INFINITY,
    }
}

fn probe_seed(seed: u64, id: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Seeded multi-start search: half the budget on random probes, the rest on
/// Nelder–Mead runs started from the best probes. Deterministic per `(seed, budget)`.
/// Spectra where the quantity is undefined (e.g. a degenerate top eigenvalue) are skipped.
pub fn manifold_scan(n: usize, q: &JacobiQuantity, dom: &ScanDomain, budget: usize, seed: u64) -> Result<ScanResult> {
    if budget == 0 {
        return domain("scan budget must be at least 1");
    }
    if n < 2 {
        return domain(format!("scan needs n >= 2, got {n}"));
    }
    let d = n - 1;
    let (lo, hi) = dom.probe_range();
    let probes = (budget / 2).max(1);
    let probe_vals: Vec<(f64, usize, Vec<f64>)> = (0..probes)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(probe_seed(seed, id as u64));
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            (objective(dom, q, &z), id, z)
        })
        .collect();
    let mut ranked: Vec<&(f64, usize, Vec<f64>)> = probe_vals.iter().filter(|p| p.0.is_finite()).collect();
    if ranked.is_empty() {
        return Err(Error::Sampling(probes));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let remaining = budget.saturating_sub(probes);
    let starts = if remaining > 0 { (remaining / 100).clamp(1, 16).min(ranked.len()) } else { 0 };
    let local: Vec<(f64, usize, Vec<f64>, usize)> = ranked[..starts]
        .par_iter()
        .enumerate()
        .map(|(s, p)| {
            let f = |z: &[f64]| objective(dom, q, z);
            let m = nelder_mead(&f, &p.2, 0.5, remaining / starts);
            (m.value, probes + s, m.x, m.evaluations)
        })
        .collect();

    let mut best = (ranked[0].0, ranked[0].1, ranked[0].2.clone());
    for (v, id, z, _) in &local {
        if v.total_cmp(&best.0).then(id.cmp(&best.1)).is_lt() {
            best = (*v, *id, z.clone());
        }
    }
    let lam = dom.spectrum(&best.2).expect("finite objective implies a feasible point");
    let worst = certified_min_gap(&lam, q)?;
    Ok(ScanResult {
        worst,
        evaluations: probes + local.iter().map(|l| l.3).sum::<usize>(),
        random_probes: probes,
        local_starts: starts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// Smallest sampled trace above which every sample satisfies the
    /// inequality; `+inf` when the largest sample already fails or the budget is 0.
    pub threshold: f64,
    pub samples: usize,
    pub violations: usize,
    pub worst_gap: f64,
    /// Largest trace among violating samples.
    pub max_violating_trace: f64,
}

/// Empirical `C(K)` such that `Delta_F ln(trace) >= |grad_F ln(trace)|^2`
/// held on every sampled spectrum with `trace >= C(K)` and `lambda_min >= -K`.
pub fn trace_threshold(n: usize, k: f64, budget: usize, seed: u64) -> Result<ThresholdEstimate> {
    if !(k >= 0.0) {
        return domain(format!("K must be nonnegative, got {k}"));
    }
    if n < 3 {
        return domain(format!("threshold scan needs n >= 3, got {n}"));
    }
    let q = JacobiQuantity::log_trace();
    let floor = -k + FLOOR_MARGIN;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Spectrum> =
        (0..budget).map(|_| sample_on_branch(&mut rng, n, Some(floor), 100_000)).collect::<Result<_>>()?;
    let mut scored: Vec<(f64, f64)> = spectra
        .par_iter()
        .map(|s| certified_min_gap(s, &q).map(|c| (s.trace(), c.min_gap)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let violating: Vec<&(f64, f64)> = scored.iter().filter(|s| s.1 < 0.0).collect();
    let passing_run = scored.iter().take_while(|s| s.1 >= 0.0).count();
    let threshold = if passing_run == 0 { f64::INFINITY } else { scored[passing_run - 1].0 };
    Ok(ThresholdEstimate {
        threshold,
        samples: scored.len(),
        violations: violating.len(),
        worst_gap: scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min),
        max_violating_trace: violating.first().map_or(f64::NEG_INFINITY, |s| s.0),
    })
}

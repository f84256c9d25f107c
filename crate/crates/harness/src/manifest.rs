//! Reproduction manifest written next to every output.

use batchreg::driver::{rounds_for, DriverConfig};
use batchreg::model::{CovariateKind, CovariateModel, ProblemParams};
use batchreg::moments::batch_moment_bound;
use batchreg::pruning::{list_size_bound, separation};
use serde::{Deserialize, Serialize};

use crate::experiment::TrialRow;

/// Constants the driver resolves for one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConstants {
    pub d: usize,
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub m: usize,
    #[serde(rename = "Q")]
    pub q: f64,
    pub tau: f64,
    pub rounds: usize,
    pub iterations: usize,
    pub c_m: f64,
    /// Estimator moment bound in the first iteration.
    pub moment_bound_first: f64,
    pub c_sep: f64,
    /// Prune separation in the first iteration.
    pub sep_first: f64,
    pub list_size_bound: usize,
    pub batches_per_call: usize,
    pub prune_batches: usize,
    /// `c_budget ((k d)^k / alpha + alpha^{-3}) log2(R / sigma)`.
    pub theoretical_budget: f64,
    /// Mean batches drawn per trial in this cell.
    pub actual_batches: f64,
}

impl CellConstants {
    pub fn new(p: &ProblemParams, kind: CovariateKind, cfg: &DriverConfig, rows: &[TrialRow]) -> Self {
        let q = CovariateModel::new(kind, p.k).q;
        let tau = cfg.tau_for(p);
        let c_m = cfg.c_m_for(p.k);
        let theoretical_budget = theoretical_budget(p, cfg.c_budget);
        let mine: Vec<&TrialRow> = rows
            .iter()
            .filter(|r| r.d == p.d && r.n == p.n && r.alpha == p.alpha && r.k == p.k && r.m == p.m)
            .collect();
        let actual_batches = if mine.is_empty() {
            0.0
        } else {
            mine.iter().map(|r| r.batches_used as f64).sum::<f64>() / mine.len() as f64
        };
        CellConstants {
            d: p.d,
            n: p.n,
            alpha: p.alpha,
            k: p.k,
            m: p.m,
            q,
            tau,
            rounds: rounds_for(tau),
            iterations: cfg.iterations(p),
            c_m,
            moment_bound_first: batch_moment_bound(c_m, p.k, p.n, q, p.sigma, 2.0 * p.radius),
            c_sep: cfg.prune.c_sep,
            sep_first: separation(cfg.prune.c_sep, p.radius / (2.0 * cfg.prune.c_sep), p.k, p.alpha, p.sigma, q, p.n),
            list_size_bound: list_size_bound(p.alpha),
            batches_per_call: cfg.per_call(p),
            prune_batches: cfg.per_prune(p),
            theoretical_budget,
            actual_batches,
        }
    }
}

/// Sample budget formula with the polylog factors dropped and the exponent
/// `O(k)` taken as `k`.
pub fn theoretical_budget(p: &ProblemParams, c: f64) -> f64 {
    let kd = (p.k * p.d) as f64;
    let log = (p.radius / p.sigma.max(1e-6 * p.radius)).log2().max(1.0);
    c * (kd.powi(p.k as i32) / p.alpha + p.alpha.powi(-3)) * log
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub harness: String,
    pub parallel_feature: bool,
    pub exec: batchreg::Exec,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            harness: env!("CARGO_PKG_VERSION").to_string(),
            parallel_feature: cfg!(feature = "parallel"),
            exec: batchreg::Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: u64,
    /// Sum of per-trial wall times; exceeds `total_ms` when trials overlap.
    pub trial_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub trials: usize,
    pub constants: Vec<CellConstants>,
    pub versions: Versions,
    pub timings: Timings,
    pub outputs: Vec<String>,
}

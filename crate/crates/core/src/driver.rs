//! The iterative list-decoding loop.
//!
//! Starting from `L = {origin}`, every round residualizes fresh batches by each
//! candidate, list-decodes the mean of the residual batch statistics, shifts the
//! resulting means back by the candidate, prunes the union and halves the radius.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::linalg;
use crate::listmean::{self, ListMeanConfig};
use crate::model::{Batch, BatchSampler, LabeledPoint, ProblemParams};
use crate::moments::{self, batch_moment_bound};
use crate::pruning::{self, PruneConfig, PruneParams};
use crate::rng::derive_seed;

/// Floor on `sigma`, relative to `R`, used for the loop length.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverConfig {
    /// Per-step failure probability. `None` means `0.001 / max(1, log2(R / sigma))`.
    pub tau: Option<f64>,
    pub c0: f64,
    /// `C` of the reported sample budget formula.
    pub c_budget: f64,
    /// Constant `C_M` of the estimator's moment bound. `None` means `2^{k-1} / (2k)^{2k}`.
    pub c_m: Option<f64>,
    /// Batches per list-decoding round. `None` means `params.m`.
    pub batches_per_call: Option<usize>,
    /// Batches drawn for each prune step. `None` means the smallest count for
    /// which the inlier share falls below `mass_fraction * alpha` with
    /// probability at most `tau`.
    pub prune_batches: Option<usize>,
    pub max_iterations: Option<usize>,
    /// Share one draw per iteration between all candidates and the prune step.
    pub reuse: bool,
    /// Initial list element; the zero vector when unset.
    pub origin: Option<Vec<f64>>,
    pub listmean: ListMeanConfig,
    pub prune: PruneConfig,
    pub exec: Exec,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            tau: None,
            c0: 1.0,
            c_budget: 1.0,
            c_m: None,
            batches_per_call: None,
            prune_batches: None,
            max_iterations: None,
            reuse: false,
            origin: None,
            listmean: ListMeanConfig::default(),
            prune: PruneConfig::default(),
            exec: Exec::default(),
        }
    }
}

/// `2^{k-1} / (2k)^{2k}`: with it the estimator bound equals `2 (2k-1)!! (sigma^{2k} + 2 R^{2k}) / n^k`,
/// about twice the Gaussian-approximation moment of an inlier batch statistic.
pub fn default_c_m(k: usize) -> f64 {
    let k2 = 2.0 * k as f64;
    2f64.powi(k as i32 - 1) / k2.powf(k2)
}

pub fn default_tau(radius: f64, sigma: f64) -> f64 {
    let s = sigma.max(SIGMA_FLOOR * radius);
    0.001 / (radius / s).log2().max(1.0)
}

/// Last value of `t`: `max(floor(log2(c0 R / max(sigma, 1e-6 R))), 0)`.
pub fn loop_length(radius: f64, sigma: f64, c0: f64) -> usize {
    let s = sigma.max(SIGMA_FLOOR * radius);
    (c0 * radius / s).log2().floor().max(0.0) as usize
}

pub fn rounds_for(tau: f64) -> usize {
    (1.0 / tau).ln().ceil().max(1.0) as usize
}

impl DriverConfig {
    pub fn tau_for(&self, params: &ProblemParams) -> f64 {
        self.tau.unwrap_or_else(|| default_tau(params.radius, params.sigma))
    }

    pub fn c_m_for(&self, k: usize) -> f64 {
        self.c_m.unwrap_or_else(|| default_c_m(k))
    }

    pub fn per_call(&self, params: &ProblemParams) -> usize {
        self.batches_per_call.unwrap_or(params.m)
    }

    pub fn per_prune(&self, params: &ProblemParams) -> usize {
        self.prune_batches.unwrap_or_else(|| {
            pruning::chernoff_batches(params.alpha, self.prune.mass_fraction, self.tau_for(params))
        })
    }

    pub fn iterations(&self, params: &ProblemParams) -> usize {
        let t = loop_length(params.radius, params.sigma, self.c0) + 1;
        self.max_iterations.map_or(t, |m| m.min(t))
    }

    pub fn validate(&self, params: &ProblemParams) -> Result<()> {
        let tau = self.tau_for(params);
        if !(tau > 0.0 && tau <= 0.1) {
            return Err(Error::InvalidParameter(format!("tau = {tau} outside (0, 0.1]")));
        }
        if !(self.c0 > 0.0) || self.c_m_for(params.k) <= 0.0 || !(self.prune.c_sep > 0.0) {
            return Err(Error::InvalidParameter("c0, C_M and c_sep must be positive".into()));
        }
        if let Some(o) = &self.origin {
            if o.len() != params.d {
                return Err(Error::DimensionMismatch {
                    expected: params.d,
                    found: o.len(),
                });
            }
        }
        self.listmean.validate()
    }
}

/// Everything the one-round estimator needs besides the batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams {
    pub alpha: f64,
    pub k: usize,
    pub n: usize,
    pub sigma: f64,
    pub radius: f64,
    pub q: f64,
    pub c_m: f64,
    pub rounds: usize,
    pub listmean: ListMeanConfig,
}

impl EstimatorParams {
    /// Moment bound handed to the list-decoder.
    pub fn moment_bound(&self) -> f64 {
        batch_moment_bound(self.c_m, self.k, self.n, self.q, self.sigma, self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub beta: Vec<f64>,
    /// Iteration that produced this candidate; `None` for the initial point.
    pub iteration: Option<usize>,
    /// Total weight of the feasibility witness from the last prune step.
    pub witness_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateList {
    pub candidates: Vec<Candidate>,
}

impl CandidateList {
    pub fn betas(&self) -> Vec<Vec<f64>> {
        self.candidates.iter().map(|c| c.beta.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn min_distance(&self, target: &[f64]) -> f64 {
        self.candidates
            .iter()
            .map(|c| linalg::distance(&c.beta, target))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `(x, y) -> (x, y - beta_hat^T x)` on every point.
pub fn residualize(batches: &[Batch], beta_hat: &[f64]) -> Result<Vec<Batch>> {
    batches
        .iter()
        .map(|b| {
            if b.d() != beta_hat.len() {
                return Err(Error::DimensionMismatch {
                    expected: b.d(),
                    found: beta_hat.len(),
                });
            }
            let ys = (0..b.n()).map(|i| b.y(i) - linalg::dot(b.x(i), beta_hat)).collect();
            Batch::new(b.d(), b.xs().to_vec(), ys)
        })
        .collect()
}

/// List-decodes the mean of the batch statistics, once per round on disjoint
/// consecutive slices of `batches`, and returns the union of the lists with
/// repeated certified means removed.
pub fn single_iteration_estimate(batches: &[Batch], est: &EstimatorParams, seed: u64) -> Result<Vec<Vec<f64>>> {
    let rounds = est.rounds.max(1);
    let per = batches.len() / rounds;
    let needed = (1.0 / est.alpha).ceil() as usize;
    let min_points = (2.0 / est.alpha).ceil() as usize;
    if per < needed.max(min_points) {
        return Err(Error::InsufficientBatches {
            needed: rounds * needed.max(min_points),
            got: batches.len(),
        });
    }
    let m = est.moment_bound();
    let mut all = Vec::new();
    for r in 0..rounds {
        let slice = &batches[r * per..(r + 1) * per];
        let points: Vec<Vec<f64>> = moments::batch_statistics(slice, Exec::Sequential)?
            .into_iter()
            .map(|s| s.z)
            .collect();
        let list = listmean::list_decode_mean(
            &points,
            est.alpha,
            est.k,
            m,
            &est.listmean,
            derive_seed(seed, "round", &[r as u64]),
        )?;
        all.extend(list.candidates);
    }
    // Rounds mostly rediscover the same certified clusters; keep one mean per cluster.
    let radius = est.listmean.dedup_factor * m.powf(0.5 / est.k as f64);
    let mut certified: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for c in all {
        if !c.certified {
            out.push(c.mean);
        } else if certified.iter().all(|o| linalg::distance(o, &c.mean) >= radius) {
            certified.push(c.mean.clone());
            out.push(c.mean);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub iteration: usize,
    pub radius: f64,
    pub prune_radius: f64,
    pub sep: f64,
    pub unpruned_size: usize,
    pub list_size: usize,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ProgressEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverOutput {
    pub list: CandidateList,
    pub iterations: usize,
    pub batches_used: usize,
    pub warnings: Vec<String>,
}

pub fn batch_list_decode(
    sampler: &mut dyn BatchSampler,
    params: &ProblemParams,
    q: f64,
    cfg: &DriverConfig,
    on_event: &mut dyn FnMut(&ProgressEvent),
) -> Result<DriverOutput> {
    params.validate()?;
    cfg.validate(params)?;
    let rounds = rounds_for(cfg.tau_for(params));
    let per_call = cfg.per_call(params);
    let per_prune = cfg.per_prune(params);
    let iterations = cfg.iterations(params);
    let root = derive_seed(params.seed, "driver", &[]);
    let start = sampler.drawn();

    let mut list = CandidateList {
        candidates: vec![Candidate {
            beta: cfg.origin.clone().unwrap_or_else(|| vec![0.0; params.d]),
            iteration: None,
            witness_mass: None,
        }],
    };
    let mut warnings = Vec::new();
    let bound = pruning::list_size_bound(params.alpha);

    for t in 0..iterations {
        let scale = 2f64.powi(-(t as i32));
        let est = EstimatorParams {
            alpha: params.alpha,
            k: params.k,
            n: params.n,
            sigma: params.sigma,
            radius: 2.0 * params.radius * scale,
            q,
            c_m: cfg.c_m_for(params.k),
            rounds,
            listmean: cfg.listmean.clone(),
        };
        // A survivor lies within 2 sep of the truth, and the next round needs it
        // within `radius * scale`.
        let prune_radius = params.radius * scale / (2.0 * cfg.prune.c_sep);

        let shared = if cfg.reuse {
            Some(sampler.draw(rounds * per_call.max(per_prune))?)
        } else {
            None
        };
        let mut draws = Vec::with_capacity(list.len());
        for _ in 0..list.len() {
            draws.push(match &shared {
                Some(_) => Vec::new(),
                None => sampler.draw(rounds * per_call)?,
            });
        }
        let betas = list.betas();
        let estimates = exec::map_range(cfg.exec, betas.len(), |i| -> Result<Vec<Vec<f64>>> {
            let raw = shared.as_deref().unwrap_or(&draws[i]);
            let residual = residualize(raw, &betas[i])?;
            let means = single_iteration_estimate(&residual, &est, derive_seed(root, "estimate", &[t as u64, i as u64]))?;
            Ok(means.iter().map(|m| linalg::add(m, &betas[i])).collect())
        });
        let mut merged = Vec::new();
        for e in estimates {
            merged.extend(e?);
        }
        drop(draws);

        let prune_set = match shared {
            Some(s) => s,
            None => sampler.draw(per_prune)?,
        };
        let pp = PruneParams {
            alpha: params.alpha,
            sep: pruning::separation(
                cfg.prune.c_sep,
                prune_radius,
                params.k,
                params.alpha,
                params.sigma,
                q,
                params.n,
            ),
            config: PruneConfig {
                exec: cfg.exec,
                ..cfg.prune.clone()
            },
        };
        let mut warning = None;
        let (kept, masses) = if merged.is_empty() {
            let w = format!("iteration {t}: estimator returned no candidates; keeping previous list");
            warning = Some(w);
            (list.betas(), vec![None; list.len()])
        } else {
            let outcome = pruning::prune(&merged, &prune_set, &pp)?;
            if outcome.kept.is_empty() {
                warning = Some(format!(
                    "iteration {t}: no candidate passed the feasibility check; falling back to a separated unpruned list"
                ));
                let losses = pruning::loss_table(&merged, &prune_set, cfg.exec);
                let all: Vec<usize> = (0..merged.len()).collect();
                let order = pruning::phase2_order(&all, &losses, &pp);
                let mut idx = pruning::separate(&merged, &order, pp.sep);
                idx.truncate(bound);
                (idx.iter().map(|&i| merged[i].clone()).collect(), vec![None; idx.len()])
            } else {
                (outcome.kept, outcome.witness_mass.into_iter().map(Some).collect())
            }
        };
        if kept.len() > bound {
            return Err(Error::Invariant(format!(
                "list size {} exceeds {} after iteration {t}",
                kept.len(),
                bound
            )));
        }
        let unpruned_size = merged.len();
        list = CandidateList {
            candidates: kept
                .into_iter()
                .zip(masses)
                .map(|(beta, witness_mass)| Candidate {
                    beta,
                    iteration: Some(t),
                    witness_mass,
                })
                .collect(),
        };
        if let Some(w) = &warning {
            warnings.push(w.clone());
        }
        on_event(&ProgressEvent {
            iteration: t,
            radius: est.radius,
            prune_radius,
            sep: pp.sep,
            unpruned_size,
            list_size: list.len(),
            samples: sampler.drawn() - start,
            warning,
        });
    }

    Ok(DriverOutput {
        list,
        iterations,
        batches_used: sampler.drawn() - start,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBatches {
    pub batches: Vec<Batch>,
    /// Probability that a batch is all-inlier: `alpha^n`.
    pub alpha_batch: f64,
}

/// Groups consecutive points into batches of size `n`.
pub fn self_batching_reduce(points: &[LabeledPoint], n: usize, alpha: f64) -> Result<ReducedBatches> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if points.len() % n != 0 {
        return Err(Error::NotDivisible {
            count: points.len(),
            n,
        });
    }
    let batches = points.chunks(n).map(Batch::from_points).collect::<Result<Vec<_>>>()?;
    Ok(ReducedBatches {
        batches,
        alpha_batch: alpha.powi(n as i32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_constants() {
        assert!((default_c_m(1) - 0.25).abs() < 1e-15);
        assert!((default_c_m(2) - 1.0 / 128.0).abs() < 1e-15);
        assert_eq!(loop_length(16.0, 1.0, 1.0), 4);
        assert_eq!(loop_length(1.0, 1.0, 1.0), 0);
        assert_eq!(loop_length(1.0, 0.0, 1.0), 19);
        assert_eq!(rounds_for(0.1), 3);
    }
}

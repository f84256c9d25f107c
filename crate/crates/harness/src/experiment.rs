//! Trial execution for `run` and `sweep`.

use std::time::Instant;

use batchreg::driver::{batch_list_decode, CandidateList, ProgressEvent};
use batchreg::exec;
use batchreg::linalg;
use batchreg::model::{BatchSampler, CovariateModel, GeneratorSampler, PoolSampler, ProblemParams};
use batchreg::rng::{derive_seed, rng_for};
use batchreg_oracle::subset_least_squares;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::DatasetFile;

/// One CSV row. `wall_ms` is the only column that may differ between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub m: usize,
    pub trial: usize,
    pub min_error: f64,
    pub list_size: usize,
    pub wall_ms: u64,
    pub d: usize,
    pub seed: u64,
    /// Least squares on the inlier batches among the first `m`.
    pub baseline_error: f64,
    pub batches_used: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutput {
    pub row: TrialRow,
    pub beta_star: Vec<f64>,
    pub list: CandidateList,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub events: Vec<ProgressEvent>,
}

/// Seed of trial `trial` in grid cell `p`. Depends only on the root seed and
/// the cell's coordinates, so growing the grid or the trial count leaves
/// existing trials untouched.
pub fn trial_seed(root: u64, p: &ProblemParams, trial: usize) -> u64 {
    derive_seed(
        root,
        "trial",
        &[p.d as u64, p.n as u64, p.alpha.to_bits(), p.k as u64, p.m as u64, trial as u64],
    )
}

/// Runs one trial against a live generator.
pub fn run_trial(cfg: &ExperimentConfig, cell: &ProblemParams, trial: usize, config_hash: &str) -> Result<TrialOutput> {
    let seed = trial_seed(cfg.problem.seed, cell, trial);
    let params = ProblemParams { seed, ..cell.clone() };
    let cov = CovariateModel::new(cfg.covariates, params.k);
    let beta_star = cfg.beta_star.resolve(params.d, &mut rng_for(seed, "beta-star", &[]))?;
    let adv = cfg.adversary.resolve(&beta_star);
    let sampler = GeneratorSampler::new(params.clone(), cov.clone(), beta_star.clone(), adv)?.without_log();

    let baseline = {
        let mut inliers = Vec::new();
        let mut batches = Vec::with_capacity(params.m);
        for i in 0..params.m {
            let (b, p) = sampler.batch_at(i as u64);
            if p.is_inlier() {
                inliers.push(batches.len());
            }
            batches.push(b);
        }
        if inliers.is_empty() {
            f64::INFINITY
        } else {
            linalg::distance(&subset_least_squares(&batches, &inliers).beta, &beta_star)
        }
    };

    let mut sampler = sampler;
    decode(cfg, &params, &cov, &mut sampler, beta_star, baseline, trial, config_hash)
}

/// Runs the driver on the batches of a dataset file, cycling through them when
/// the driver asks for more than the file holds.
pub fn run_on_dataset(cfg: &ExperimentConfig, file: &DatasetFile, config_hash: &str) -> Result<TrialOutput> {
    let params = file.params.clone();
    let cov = CovariateModel::new(file.covariates, params.k);
    let inliers = file.dataset.inlier_indices();
    let baseline = if inliers.is_empty() {
        f64::INFINITY
    } else {
        linalg::distance(&subset_least_squares(&file.dataset.batches, &inliers).beta, &file.beta_star)
    };
    let mut sampler = PoolSampler::new(file.dataset.batches.clone()).reusing();
    decode(cfg, &params, &cov, &mut sampler, file.beta_star.clone(), baseline, 0, config_hash)
}

#[allow(clippy::too_many_arguments)]
fn decode(
    cfg: &ExperimentConfig,
    params: &ProblemParams,
    cov: &CovariateModel,
    sampler: &mut dyn BatchSampler,
    beta_star: Vec<f64>,
    baseline_error: f64,
    trial: usize,
    config_hash: &str,
) -> Result<TrialOutput> {
    let start = Instant::now();
    let mut events = Vec::new();
    let out = batch_list_decode(sampler, params, cov.q, &cfg.driver, &mut |e| events.push(e.clone()))?;
    let wall_ms = start.elapsed().as_millis() as u64;
    Ok(TrialOutput {
        row: TrialRow {
            n: params.n,
            alpha: params.alpha,
            k: params.k,
            m: params.m,
            trial,
            min_error: out.list.min_distance(&beta_star),
            list_size: out.list.len(),
            wall_ms,
            d: params.d,
            seed: params.seed,
            baseline_error,
            batches_used: out.batches_used,
            config_hash: config_hash.to_string(),
        },
        beta_star,
        list: out.list,
        warnings: out.warnings,
        events,
    })
}

/// Every (cell, trial) pair of the config, sorted by cell then trial. Trials
/// run concurrently under the driver's execution policy.
pub fn run_grid(cfg: &ExperimentConfig, cells: &[ProblemParams]) -> Result<Vec<TrialOutput>> {
    let hash = cfg.hash();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.trials).map(move |t| (c, t))).collect();
    exec::map(cfg.driver.exec, &jobs, |_, &(c, t)| run_trial(cfg, &cells[c], t, &hash)).into_iter().collect()
}

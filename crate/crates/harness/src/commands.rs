//! Subcommand bodies. Each writes its outputs and a manifest into `cfg.out_dir`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use batchreg::driver::self_batching_reduce;
use batchreg::model::{sample_dataset, CovariateModel, Dataset, LabeledPoint, ProblemParams, Provenance};
use batchreg::rng::rng_for;
use serde::{Deserialize, Serialize};

use crate::checks::{self, CertCheckReport, MzCheckReport, PruneCheckReport};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{self, TrialOutput, TrialRow};
use crate::io::{self, DatasetFile};
use crate::manifest::{CellConstants, RunManifest, Timings, Versions};
use crate::stats::{median, Summary};

fn manifest(cfg: &ExperimentConfig, command: &str, cells: &[ProblemParams], rows: &[TrialRow], started: Instant, outputs: &[&str]) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.problem.seed,
        trials: cfg.trials,
        constants: cells.iter().map(|c| CellConstants::new(c, cfg.covariates, &cfg.driver, rows)).collect(),
        versions: Versions::default(),
        timings: Timings {
            total_ms: started.elapsed().as_millis() as u64,
            trial_ms: rows.iter().map(|r| r.wall_ms).sum(),
        },
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    }
}

fn write_manifest(cfg: &ExperimentConfig, m: &RunManifest) -> Result<()> {
    io::write_json(&cfg.out_dir.join("manifest.json"), m)?;
    io::write_json(&cfg.out_dir.join("config.json"), cfg)
}

/// Writes `dataset.json` for the base cell of the config.
pub fn generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let started = Instant::now();
    io::ensure_dir(&cfg.out_dir)?;
    let p = &cfg.problem;
    let beta_star = cfg.beta_star.resolve(p.d, &mut rng_for(p.seed, "beta-star", &[]))?;
    let adv = cfg.adversary.resolve(&beta_star);
    let cov = CovariateModel::new(cfg.covariates, p.k);
    let dataset = sample_dataset(p, &cov, &beta_star, &adv)?;
    let file = DatasetFile {
        params: p.clone(),
        covariates: cfg.covariates,
        beta_star,
        adversary: adv.tag().to_string(),
        dataset,
    };
    let path = cfg.out_dir.join("dataset.json");
    io::write_json(&path, &file)?;
    write_manifest(cfg, &manifest(cfg, "generate", &[p.clone()], &[], started, &["dataset.json"]))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trials: usize,
    pub median_min_error: f64,
    pub max_list_size: usize,
    pub median_baseline_error: f64,
    pub warnings: usize,
}

fn finish_run(cfg: &ExperimentConfig, command: &str, cells: &[ProblemParams], outputs: &[TrialOutput], started: Instant) -> Result<Vec<TrialRow>> {
    let rows: Vec<TrialRow> = outputs.iter().map(|o| o.row.clone()).collect();
    let csv_name = format!("{command}.csv");
    io::write_csv(&cfg.out_dir.join(&csv_name), &rows)?;
    io::write_candidates(&cfg.out_dir.join("candidates.json"), outputs)?;
    io::write_events(&cfg.out_dir.join("events.jsonl"), outputs)?;
    let m = manifest(cfg, command, cells, &rows, started, &[&csv_name, "candidates.json", "events.jsonl", "summary.json"]);
    write_manifest(cfg, &m)?;
    Ok(rows)
}

/// `run`: the base cell, `cfg.trials` times, or once on a dataset file.
pub fn run(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<RunSummary> {
    let started = Instant::now();
    io::ensure_dir(&cfg.out_dir)?;
    let (cells, outputs) = match dataset {
        Some(path) => {
            let file: DatasetFile = io::read_json(path)?;
            let out = experiment::run_on_dataset(cfg, &file, &cfg.hash())?;
            (vec![file.params.clone()], vec![out])
        }
        None => {
            let cells = vec![cfg.problem.clone()];
            let outputs = experiment::run_grid(cfg, &cells)?;
            (cells, outputs)
        }
    };
    let rows = finish_run(cfg, "run", &cells, &outputs, started)?;
    let summary = RunSummary {
        trials: rows.len(),
        median_min_error: median(rows.iter().map(|r| r.min_error)),
        max_list_size: rows.iter().map(|r| r.list_size).max().unwrap_or(0),
        median_baseline_error: median(rows.iter().map(|r| r.baseline_error)),
        warnings: outputs.iter().map(|o| o.warnings.len()).sum(),
    };
    io::write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// `sweep`: every grid cell, `cfg.trials` times each.
pub fn sweep(cfg: &ExperimentConfig) -> Result<(Vec<TrialRow>, Summary)> {
    let started = Instant::now();
    io::ensure_dir(&cfg.out_dir)?;
    let cells = cfg.cells();
    let outputs = experiment::run_grid(cfg, &cells)?;
    let rows = finish_run(cfg, "sweep", &cells, &outputs, started)?;
    let summary = Summary::from_rows(&rows);
    io::write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    Ok((rows, summary))
}

fn check_output<T: Serialize>(cfg: &ExperimentConfig, command: &str, report: &T, started: Instant) -> Result<()> {
    io::ensure_dir(&cfg.out_dir)?;
    let name = format!("{command}.json");
    io::write_json(&cfg.out_dir.join(&name), report)?;
    write_manifest(cfg, &manifest(cfg, command, &[], &[], started, &[&name]))
}

pub fn mz_check(cfg: &ExperimentConfig) -> Result<MzCheckReport> {
    let started = Instant::now();
    let r = checks::mz_check(&cfg.checks.mz, cfg.problem.seed)?;
    check_output(cfg, "mz-check", &r, started)?;
    Ok(r)
}

pub fn cert_check(cfg: &ExperimentConfig) -> Result<CertCheckReport> {
    let started = Instant::now();
    let r = checks::cert_check(&cfg.checks.cert, cfg.problem.seed, cfg.driver.exec)?;
    check_output(cfg, "cert-check", &r, started)?;
    Ok(r)
}

pub fn prune_check(cfg: &ExperimentConfig) -> Result<PruneCheckReport> {
    let started = Instant::now();
    let r = checks::prune_check(&cfg.checks.prune, &cfg.driver.prune, cfg.problem.seed, cfg.driver.exec)?;
    check_output(cfg, "prune-check", &r, started)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceSummary {
    pub points: usize,
    pub batch_size: usize,
    pub batches: usize,
    pub alpha_batch: f64,
    pub run: RunSummary,
}

/// `reduce`: groups a size-1-batch dataset into batches of `reduce.batch_size`
/// and list-decodes the result with inlier rate `alpha^n`.
pub fn reduce(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<ReduceSummary> {
    let started = Instant::now();
    io::ensure_dir(&cfg.out_dir)?;
    let batch_size = cfg
        .reduce
        .as_ref()
        .ok_or_else(|| HarnessError::Config("reduce needs a `reduce` section".into()))?
        .batch_size;
    let file = match dataset {
        Some(p) => io::read_json::<DatasetFile>(p)?,
        None => {
            let mut c = cfg.clone();
            c.problem.n = 1;
            c.out_dir = cfg.out_dir.join("source");
            io::read_json(&generate(&c)?)?
        }
    };
    if file.params.n != 1 {
        return Err(HarnessError::Config(format!("reduce expects batches of size 1, got n = {}", file.params.n)));
    }
    let points: Vec<LabeledPoint> = file.dataset.batches.iter().flat_map(|b| b.points()).collect();
    let usable = points.len() - points.len() % batch_size;
    let reduced = self_batching_reduce(&points[..usable], batch_size, file.params.alpha)?;
    let provenance: Vec<Provenance> = file.dataset.provenance[..usable]
        .chunks(batch_size)
        .map(|c| if c.iter().all(Provenance::is_inlier) { Provenance::Inlier } else { Provenance::Outlier("mixed".into()) })
        .collect();
    let params = ProblemParams {
        n: batch_size,
        m: reduced.batches.len(),
        alpha: reduced.alpha_batch,
        ..file.params.clone()
    };
    let out_file = DatasetFile {
        params: params.clone(),
        covariates: file.covariates,
        beta_star: file.beta_star.clone(),
        adversary: file.adversary.clone(),
        dataset: Dataset {
            batches: reduced.batches,
            provenance,
        },
    };
    io::write_json(&cfg.out_dir.join("reduced.json"), &out_file)?;
    let mut run_cfg = cfg.clone();
    run_cfg.problem = params.clone();
    let out = experiment::run_on_dataset(&run_cfg, &out_file, &cfg.hash())?;
    let rows = finish_run(cfg, "reduce", &[params], std::slice::from_ref(&out), started)?;
    let summary = ReduceSummary {
        points: points.len(),
        batch_size,
        batches: out_file.dataset.batches.len(),
        alpha_batch: out_file.params.alpha,
        run: RunSummary {
            trials: 1,
            median_min_error: rows[0].min_error,
            max_list_size: rows[0].list_size,
            median_baseline_error: rows[0].baseline_error,
            warnings: out.warnings.len(),
        },
    };
    io::write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

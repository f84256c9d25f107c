//! Experiment configuration: one strict JSON document per experiment.

use std::path::{Path, PathBuf};

use batchreg::driver::DriverConfig;
use batchreg::listmean::FilterMode;
use batchreg::model::{AdversaryModel, CovariateKind, ProblemParams};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// How the true regressor of a trial is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum BetaSpec {
    /// The same vector in every trial. Its length must match `d`.
    Fixed { value: Vec<f64> },
    /// `norm * e_1`.
    Axis { norm: f64 },
    /// Uniformly random direction per trial, fixed norm.
    Random { norm: f64 },
}

impl BetaSpec {
    pub fn resolve(&self, d: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match self {
            BetaSpec::Fixed { value } => {
                if value.len() != d {
                    return Err(HarnessError::Config(format!("beta_star has length {}, d = {d}", value.len())));
                }
                Ok(value.clone())
            }
            BetaSpec::Axis { norm } => {
                let mut b = vec![0.0; d];
                b[0] = *norm;
                Ok(b)
            }
            BetaSpec::Random { norm } => {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
                let s = batchreg::linalg::norm(&v).max(f64::MIN_POSITIVE);
                Ok(v.iter().map(|a| a * norm / s).collect())
            }
        }
    }
}

/// Adversary description that does not depend on `d` or on the trial's `beta_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum AdversarySpec {
    /// Decoys at `beta_star + distance * e_j` for `j = 2, ..., count + 1` (cyclic in `d`).
    DecoyOffsets { count: usize, distance: f64 },
    /// Every outlier batch is fit exactly by `beta_star + distance * e_2`.
    PointMassOffset { distance: f64 },
    /// Fully specified model; vectors are absolute.
    Model { model: AdversaryModel },
}

impl AdversarySpec {
    pub fn resolve(&self, beta_star: &[f64]) -> AdversaryModel {
        let d = beta_star.len();
        let shifted = |j: usize, dist: f64| {
            let mut v = beta_star.to_vec();
            v[j % d] += dist;
            v
        };
        match self {
            AdversarySpec::DecoyOffsets { count, distance } => AdversaryModel::DecoyRegressors {
                decoys: (1..=*count).map(|j| shifted(j, *distance)).collect(),
            },
            AdversarySpec::PointMassOffset { distance } => AdversaryModel::PointMass {
                target: shifted(1, *distance),
            },
            AdversarySpec::Model { model } => model.clone(),
        }
    }
}

/// Grid for `sweep`. Empty axes fall back to the value in `problem`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub d: Vec<usize>,
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
    pub k: Vec<usize>,
    pub m: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MzCheckConfig {
    /// Atom values of the exhaustive two-atom sweep.
    pub atoms: Vec<f64>,
    /// Probabilities of the first atom.
    pub probabilities: Vec<f64>,
    pub max_n: usize,
    pub orders: Vec<usize>,
    /// Gaussian Monte Carlo instances.
    pub instances: usize,
    /// Draws per Monte Carlo instance.
    pub draws: usize,
    pub ratio_limit: f64,
    pub min_pass_rate: f64,
}

impl Default for MzCheckConfig {
    fn default() -> Self {
        MzCheckConfig {
            atoms: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            probabilities: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            max_n: 5,
            orders: vec![2, 4],
            instances: 100,
            draws: 4000,
            ratio_limit: 1.2,
            min_pass_rate: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertCheckConfig {
    pub instances: usize,
    pub max_d: usize,
    pub max_k: usize,
    pub points: usize,
    pub directions: usize,
    /// `pass => sup <= M (1 + tolerance)`.
    pub tolerance: f64,
}

impl Default for CertCheckConfig {
    fn default() -> Self {
        CertCheckConfig {
            instances: 1000,
            max_d: 4,
            max_k: 2,
            points: 200,
            directions: 200,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneCheckConfig {
    pub instances: usize,
    pub d: usize,
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub sigma: f64,
    pub radius: f64,
    pub batches: usize,
    /// Decoy regressors generating the outlier batches; each is also in the list.
    pub decoys: usize,
    /// Extra list entries drawn uniformly from the ball of radius `4 R` around `beta_star`.
    pub junk: usize,
    /// Inlier share of the batches, as a multiple of `alpha`.
    pub inlier_share: f64,
    pub min_survival: f64,
}

impl Default for PruneCheckConfig {
    fn default() -> Self {
        PruneCheckConfig {
            instances: 100,
            d: 4,
            n: 16,
            alpha: 0.1,
            k: 2,
            sigma: 1.0,
            radius: 4.0,
            batches: 2000,
            decoys: 4,
            junk: 20,
            inlier_share: 0.95,
            min_survival: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub mz: MzCheckConfig,
    pub cert: CertCheckConfig,
    pub prune: PruneCheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceConfig {
    /// Size of the batches formed from consecutive points.
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemParams,
    #[serde(default = "default_covariates")]
    pub covariates: CovariateKind,
    pub adversary: AdversarySpec,
    pub beta_star: BetaSpec,
    #[serde(default)]
    pub driver: DriverConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub reduce: Option<ReduceConfig>,
}

fn default_covariates() -> CovariateKind {
    CovariateKind::StandardGaussian
}

fn default_trials() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.driver.validate(&self.problem)?;
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Applies the command-line overrides shared by every subcommand.
    pub fn apply_overrides(&mut self, seed: Option<u64>, trials: Option<usize>, out: Option<PathBuf>, deterministic_filter: bool) {
        if let Some(s) = seed {
            self.problem.seed = s;
        }
        if let Some(t) = trials {
            self.trials = t;
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        if deterministic_filter {
            self.driver.listmean.filter_mode = FilterMode::Deterministic;
        }
    }

    /// Problem parameters of every grid cell, in grid order.
    pub fn cells(&self) -> Vec<ProblemParams> {
        let p = &self.problem;
        let or = |v: &Vec<usize>, x: usize| if v.is_empty() { vec![x] } else { v.clone() };
        let alphas = if self.sweep.alpha.is_empty() { vec![p.alpha] } else { self.sweep.alpha.clone() };
        let mut out = Vec::new();
        for &d in &or(&self.sweep.d, p.d) {
            for &alpha in &alphas {
                for &k in &or(&self.sweep.k, p.k) {
                    for &n in &or(&self.sweep.n, p.n) {
                        for &m in &or(&self.sweep.m, p.m) {
                            out.push(ProblemParams { d, n, m, alpha, k, ..p.clone() });
                        }
                    }
                }
            }
        }
        out
    }
}

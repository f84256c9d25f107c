//! Oracle-backed check suites behind `mz-check`, `cert-check` and `prune-check`.

use batchreg::exec::{self, Exec};
use batchreg::linalg;
use batchreg::model::{sample_inlier_batch, AdversaryModel, Batch, CovariateKind, CovariateModel, ProblemParams};
use batchreg::moments::{certify_moment_bound, verify_mz_bound};
use batchreg::pruning::{list_size_bound, prune, separation, PruneConfig, PruneParams};
use batchreg::rng::rng_for;
use batchreg_oracle::{directional_moment_sup, mz_exact_tiny, OracleReport};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{CertCheckConfig, MzCheckConfig, PruneCheckConfig};
use crate::error::{HarnessError, Result};

/// Relative slack when comparing an exact enumeration against its bound.
pub const EXACT_TOL: f64 = 1e-12;
/// Relative slack of the sandwich `directional sup <= lambda_max`.
pub const SANDWICH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MzCheckReport {
    pub exact_cases: usize,
    pub exact_violations: usize,
    pub worst_exact: Option<OracleReport>,
    pub mc_instances: usize,
    pub mc_within_limit: usize,
    pub mc_pass_rate: f64,
    pub worst_mc_ratio: f64,
    pub ratio_limit: f64,
    pub passed: bool,
    /// Every failing comparison.
    pub failures: Vec<OracleReport>,
}

pub fn mz_check(cfg: &MzCheckConfig, seed: u64) -> Result<MzCheckReport> {
    let mut exact_cases = 0;
    let mut failures = Vec::new();
    let mut worst: Option<OracleReport> = None;
    for (i, &a) in cfg.atoms.iter().enumerate() {
        for &b in &cfg.atoms[i + 1..] {
            for &p in &cfg.probabilities {
                for n in 1..=cfg.max_n {
                    for &k in &cfg.orders {
                        let r = mz_exact_tiny(&[(a, p), (b, 1.0 - p)], n, k)
                            .map_err(|e| HarnessError::Config(e.to_string()))?;
                        exact_cases += 1;
                        let rep = OracleReport::upper_bound(
                            &format!("mz exact a={a} b={b} p={p} n={n} k={k}"),
                            r.lhs,
                            r.rhs,
                            EXACT_TOL,
                        );
                        if worst.as_ref().is_none_or(|w| rep.rel_error > w.rel_error) {
                            worst = Some(rep.clone());
                        }
                        if !rep.passed {
                            failures.push(rep);
                        }
                    }
                }
            }
        }
    }
    let exact_violations = failures.len();

    let mc = (0..cfg.instances)
        .map(|i| {
            let mut rng = rng_for(seed, "mz-check", &[i as u64]);
            let d = rng.random_range(1..=4usize);
            let n = rng.random_range(1..=16usize);
            let k = if rng.random_bool(0.5) { 2 } else { 4 };
            let sigma = rng.random_range(0.1..2.0);
            let beta: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let cov = CovariateModel::new(CovariateKind::StandardGaussian, k);
            let r = verify_mz_bound(&cov, &beta, sigma, n, k, cfg.draws, &mut rng)?;
            Ok((r.ratio, format!("mz monte carlo d={d} n={n} k={k}"), r.lhs, r.rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut within = 0;
    let mut worst_mc_ratio: f64 = 0.0;
    for (ratio, name, lhs, rhs) in mc {
        worst_mc_ratio = worst_mc_ratio.max(ratio);
        if ratio <= cfg.ratio_limit {
            within += 1;
        } else {
            failures.push(OracleReport::upper_bound(&name, lhs, rhs, cfg.ratio_limit - 1.0));
        }
    }
    let mc_pass_rate = if cfg.instances == 0 { 1.0 } else { within as f64 / cfg.instances as f64 };
    Ok(MzCheckReport {
        exact_cases,
        exact_violations,
        worst_exact: worst,
        mc_instances: cfg.instances,
        mc_within_limit: within,
        mc_pass_rate,
        worst_mc_ratio,
        ratio_limit: cfg.ratio_limit,
        passed: exact_violations == 0 && mc_pass_rate >= cfg.min_pass_rate,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertCheckReport {
    pub instances: usize,
    pub certified: usize,
    /// Certified instances whose directional supremum exceeds `M (1 + tol)`.
    pub unsound: usize,
    /// Instances with directional supremum above `lambda_max`.
    pub sandwich_violations: usize,
    /// Largest `sup / lambda_max`.
    pub max_sandwich_ratio: f64,
    pub passed: bool,
    pub failures: Vec<OracleReport>,
}

fn cloud(rng: &mut impl Rng, d: usize, count: usize) -> Vec<Vec<f64>> {
    let shape = rng.random_range(0..4);
    let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
    let shift: Vec<f64> = (0..d).map(|_| 3.0 * rng.random::<f64>()).collect();
    (0..count)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let g: f64 = StandardNormal.sample(&mut *rng);
                    let v = match shape {
                        0 => g,
                        1 => g * g * g,
                        2 => g + if i % 3 == 0 { shift[j] } else { 0.0 },
                        _ => rng.random_range(-1.0..1.0),
                    };
                    v * scales[j]
                })
                .collect()
        })
        .collect()
}

pub fn cert_check(cfg: &CertCheckConfig, seed: u64, ex: Exec) -> Result<CertCheckReport> {
    let results = exec::map_range(ex, cfg.instances, |i| -> Result<(bool, f64, f64, f64)> {
        let mut rng = rng_for(seed, "cert-check", &[i as u64]);
        let d = rng.random_range(1..=cfg.max_d);
        let k = rng.random_range(1..=cfg.max_k);
        let points = cloud(&mut rng, d, cfg.points);
        let mu = batchreg::moments::mean(&points);
        let spread = points.iter().map(|p| linalg::distance(p, &mu).powi(2)).sum::<f64>() / (points.len() * d) as f64;
        let bound = spread.powi(k as i32) * batchreg::model::double_factorial_odd(k) * rng.random_range(0.3..3.0);
        let cert = certify_moment_bound(&points, k, bound)?;
        let sup = directional_moment_sup(&points, k, cfg.directions, &mut rng).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok((cert.passed, bound, cert.lambda_max, sup))
    });
    let mut certified = 0;
    let mut unsound = 0;
    let mut sandwich = 0;
    let mut max_ratio: f64 = 0.0;
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (passed, bound, lambda, sup) = r?;
        max_ratio = max_ratio.max(sup / lambda.max(f64::MIN_POSITIVE));
        let sw = OracleReport::upper_bound(&format!("sandwich instance {i}"), sup, lambda, SANDWICH_TOL);
        if !sw.passed {
            sandwich += 1;
            failures.push(sw);
        }
        if passed {
            certified += 1;
            let sound = OracleReport::upper_bound(&format!("soundness instance {i}"), sup, bound, cfg.tolerance);
            if !sound.passed {
                unsound += 1;
                failures.push(sound);
            }
        }
    }
    Ok(CertCheckReport {
        instances: cfg.instances,
        certified,
        unsound,
        sandwich_violations: sandwich,
        max_sandwich_ratio: max_ratio,
        passed: unsound == 0 && sandwich == 0,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneInstance {
    pub instance: usize,
    pub list_len: usize,
    pub kept: usize,
    pub sep: f64,
    /// Distance from `beta_star` to the closest kept candidate.
    pub min_distance: f64,
    pub min_pairwise: f64,
    pub survived: bool,
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneCheckReport {
    pub instances: usize,
    pub batches: usize,
    pub survived: usize,
    pub survival_rate: f64,
    pub separated: usize,
    pub max_list_size: usize,
    pub list_size_bound: usize,
    pub passed: bool,
    pub details: Vec<PruneInstance>,
}

fn random_in_ball(rng: &mut impl Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let s = linalg::norm(&g).max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&g).map(|(c, v)| c + r * v / s).collect()
}

/// One pruning instance: a list holding a point strictly within `R` of the
/// truth, the decoys that generate the outlier batches, and junk.
pub fn prune_instance(cfg: &PruneCheckConfig, prune_cfg: &PruneConfig, seed: u64, i: usize) -> Result<PruneInstance> {
    let mut rng = rng_for(seed, "prune-check", &[i as u64]);
    let batches = cfg.batches;
    let d = cfg.d;
    let r = cfg.radius;
    let cov = CovariateModel::new(CovariateKind::StandardGaussian, cfg.k);
    let beta_star = random_in_ball(&mut rng, &vec![0.0; d], 2.0 * r);
    let sep = separation(prune_cfg.c_sep, r, cfg.k, cfg.alpha, cfg.sigma, cov.q, cfg.n);

    let mut list = vec![random_in_ball(&mut rng, &beta_star, r * (1.0 - 1e-9))];
    let decoys: Vec<Vec<f64>> = (0..cfg.decoys)
        .map(|_| {
            let dir = random_in_ball(&mut rng, &vec![0.0; d], 1.0);
            let s = linalg::norm(&dir).max(f64::MIN_POSITIVE);
            let dist = rng.random_range(1.0..4.0) * sep;
            beta_star.iter().zip(&dir).map(|(b, v)| b + dist * v / s).collect()
        })
        .collect();
    list.extend(decoys.iter().cloned());
    for _ in 0..cfg.junk {
        list.push(random_in_ball(&mut rng, &beta_star, 4.0 * r));
    }
    list.shuffle(&mut rng);

    let params = ProblemParams {
        d,
        n: cfg.n,
        m: batches,
        alpha: cfg.alpha,
        sigma: cfg.sigma,
        radius: 1e6,
        k: cfg.k,
        seed,
    };
    let inliers = (cfg.inlier_share * cfg.alpha * batches as f64).ceil() as usize;
    let adv = AdversaryModel::DecoyRegressors { decoys };
    let mut data: Vec<Batch> = Vec::with_capacity(batches);
    for _ in 0..inliers.min(batches) {
        data.push(sample_inlier_batch(&params, &cov, &beta_star, &mut rng)?);
    }
    while data.len() < batches {
        let mut pick = rng_for(seed, "prune-check-pick", &[i as u64, data.len() as u64]);
        data.push(adv.sample_batch(&params, &cov, &mut rng, &mut pick));
    }
    data.shuffle(&mut rng);

    let pp = PruneParams {
        alpha: cfg.alpha,
        sep,
        config: prune_cfg.clone(),
    };
    let out = prune(&list, &data, &pp)?;
    let min_distance = out.kept.iter().map(|b| linalg::distance(b, &beta_star)).fold(f64::INFINITY, f64::min);
    let mut min_pairwise = f64::INFINITY;
    for a in 0..out.kept.len() {
        for b in a + 1..out.kept.len() {
            min_pairwise = min_pairwise.min(linalg::distance(&out.kept[a], &out.kept[b]));
        }
    }
    Ok(PruneInstance {
        instance: i,
        list_len: list.len(),
        kept: out.kept.len(),
        sep,
        min_distance,
        min_pairwise,
        survived: min_distance <= 2.0 * sep,
        separated: min_pairwise >= sep,
    })
}

pub fn prune_check(cfg: &PruneCheckConfig, prune_cfg: &PruneConfig, seed: u64, ex: Exec) -> Result<PruneCheckReport> {
    let details = exec::map_range(ex, cfg.instances, |i| prune_instance(cfg, prune_cfg, seed, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let survived = details.iter().filter(|r| r.survived).count();
    let separated = details.iter().filter(|r| r.separated).count();
    let max_list_size = details.iter().map(|r| r.kept).max().unwrap_or(0);
    let bound = list_size_bound(cfg.alpha);
    let survival_rate = if details.is_empty() { 1.0 } else { survived as f64 / details.len() as f64 };
    Ok(PruneCheckReport {
        instances: details.len(),
        batches: cfg.batches,
        survived,
        survival_rate,
        separated,
        max_list_size,
        list_size_bound: bound,
        passed: survival_rate >= cfg.min_survival && separated == details.len() && max_list_size <= bound,
        details,
    })
}

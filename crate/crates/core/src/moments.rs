//! Batch statistics, flattened moment matrices and moment certificates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::linalg;
use crate::model::{Batch, CovariateModel, ProblemParams};
use crate::tensor::{self, SymIndex};

/// Largest admissible side `d^t` of a flattened moment matrix.
pub const MAX_FLAT_DIM: usize = 4096;

/// Points per accumulation chunk. Chunk partial sums are combined in chunk
/// order, so results do not depend on the thread schedule.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStatistic {
    pub z: Vec<f64>,
    pub index: usize,
}

/// `Z_B = (1/n) sum x y`, summed in batch order.
pub fn batch_average(b: &Batch) -> Result<BatchStatistic> {
    let n = b.n();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut z = vec![0.0; b.d()];
    for i in 0..n {
        let y = b.y(i);
        for (zj, xj) in z.iter_mut().zip(b.x(i)) {
            *zj += xj * y;
        }
    }
    let inv = 1.0 / n as f64;
    z.iter_mut().for_each(|v| *v *= inv);
    Ok(BatchStatistic { z, index: 0 })
}

pub fn batch_statistics(batches: &[Batch], ex: Exec) -> Result<Vec<BatchStatistic>> {
    exec::map(ex, batches, |i, b| {
        batch_average(b).map(|mut s| {
            s.index = i;
            s
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlattenedMomentMatrix {
    pub t: usize,
    pub mu: Vec<f64>,
    pub mat: DMatrix<f64>,
}

impl FlattenedMomentMatrix {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `(v^{(x)t})^T A v^{(x)t}`
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let vt = tensor::tensor_power(v, self.t);
        let mut acc = 0.0;
        for (i, a) in vt.iter().enumerate() {
            let row: f64 = self.mat.row(i).iter().zip(&vt).map(|(m, b)| m * b).sum();
            acc += a * row;
        }
        acc
    }

    pub fn lambda_max(&self) -> Result<f64> {
        Ok(self.top_eigen()?.0)
    }

    /// Top eigenpair. The range of the matrix lies in the symmetric tensors, so
    /// the problem is solved in the orthonormal basis of normalized monomials
    /// (`C(d+t-1, t)` rows instead of `d^t`) and the vector mapped back.
    pub fn top_eigen(&self) -> Result<(f64, DVector<f64>)> {
        let idx = SymIndex::get(self.mu.len(), self.t);
        let fold = idx.fold_map();
        let cnt = idx.count(self.t);
        let mut rep = vec![usize::MAX; cnt];
        let mut scale = vec![0.0f64; cnt];
        for (r, &s) in fold.iter().enumerate() {
            let s = s as usize;
            if rep[s] == usize::MAX {
                rep[s] = r;
            }
            scale[s] += 1.0;
        }
        scale.iter_mut().for_each(|c| *c = c.sqrt());
        let reduced = DMatrix::from_fn(cnt, cnt, |a, b| scale[a] * scale[b] * self.mat[(rep[a], rep[b])]);
        let (lambda, u) = linalg::top_eigen(&reduced)?;
        let v = DVector::from_iterator(fold.len(), fold.iter().map(|&s| u[s as usize] / scale[s as usize]));
        Ok((lambda, v))
    }
}

fn check_points(points: &[Vec<f64>], mu: &[f64]) -> Result<usize> {
    let d = mu.len();
    if d == 0 {
        return Err(Error::InvalidParameter("zero dimension".into()));
    }
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
    }
    Ok(d)
}

/// Weighted degree-`2t` central moments, one value per index multiset.
/// Returns the accumulated sums and the total weight.
pub(crate) fn unique_moments(
    points: &[Vec<f64>],
    weights: Option<&[f64]>,
    idx: &SymIndex,
    mu: &[f64],
    ex: Exec,
) -> (Vec<f64>, f64) {
    let off = idx.offset(idx.t);
    let halves = idx.halves();
    let cnt = halves.len();
    let chunks = points.len().div_ceil(CHUNK);
    let partial = exec::map_range(ex, chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(points.len());
        let mut acc = vec![0.0; cnt];
        let mut wsum = 0.0;
        let mut buf = vec![0.0; idx.monomial_len()];
        let mut z = vec![0.0; mu.len()];
        for i in lo..hi {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            wsum += w;
            for ((zj, pj), mj) in z.iter_mut().zip(&points[i]).zip(mu) {
                *zj = pj - mj;
            }
            idx.monomials_to(&z, &mut buf, idx.t);
            let m = &buf[off..];
            for (a, &(p, q)) in acc.iter_mut().zip(halves) {
                *a += w * m[p as usize] * m[q as usize];
            }
        }
        (acc, wsum)
    });
    let mut acc = vec![0.0; cnt];
    let mut wsum = 0.0;
    for (a, w) in partial {
        acc.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
        wsum += w;
    }
    (acc, wsum)
}

fn scatter(idx: &SymIndex, unique: &[f64]) -> DMatrix<f64> {
    let rows = idx.rows();
    let map = idx.flat_map();
    DMatrix::from_fn(rows, rows, |r, c| unique[map[r * rows + c] as usize])
}

pub fn empirical_moment_matrix(points: &[Vec<f64>], t: usize, mu: &[f64]) -> Result<FlattenedMomentMatrix> {
    weighted_moment_matrix(points, None, t, mu, Exec::default())
}

/// Moment matrix under point weights (normalized by their sum).
pub fn weighted_moment_matrix(
    points: &[Vec<f64>],
    weights: Option<&[f64]>,
    t: usize,
    mu: &[f64],
    ex: Exec,
) -> Result<FlattenedMomentMatrix> {
    if t == 0 {
        return Err(Error::InvalidParameter("moment order t must be positive".into()));
    }
    let d = check_points(points, mu)?;
    tensor::checked_rows(d, t, MAX_FLAT_DIM)?;
    if points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: w.len(),
            });
        }
    }
    let idx = SymIndex::get(d, t);
    let (mut unique, wsum) = unique_moments(points, weights, &idx, mu, ex);
    if wsum <= 0.0 {
        return Err(Error::InvalidParameter("total weight is zero".into()));
    }
    unique.iter_mut().for_each(|v| *v /= wsum);
    Ok(FlattenedMomentMatrix {
        t,
        mu: mu.to_vec(),
        mat: scatter(&idx, &unique),
    })
}

pub fn mean(points: &[Vec<f64>]) -> Vec<f64> {
    weighted_mean(points, None)
}

pub fn weighted_mean(points: &[Vec<f64>], weights: Option<&[f64]>) -> Vec<f64> {
    let d = points.first().map_or(0, |p| p.len());
    let mut mu = vec![0.0; d];
    let mut wsum = 0.0;
    for (i, p) in points.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        wsum += w;
        mu.iter_mut().zip(p).for_each(|(m, v)| *m += w * v);
    }
    if wsum > 0.0 {
        mu.iter_mut().for_each(|m| *m /= wsum);
    }
    mu
}

pub fn weighted_covariance(points: &[Vec<f64>], weights: Option<&[f64]>, mu: &[f64]) -> DMatrix<f64> {
    let d = mu.len();
    let mut cov = DMatrix::zeros(d, d);
    let mut wsum = 0.0;
    let mut z = vec![0.0; d];
    for (i, p) in points.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        wsum += w;
        for j in 0..d {
            z[j] = p[j] - mu[j];
        }
        for a in 0..d {
            let za = w * z[a];
            for b in a..d {
                cov[(a, b)] += za * z[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = if wsum > 0.0 { cov[(a, b)] / wsum } else { 0.0 };
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCertificate {
    pub degree: usize,
    #[serde(rename = "M")]
    pub bound: f64,
    pub lambda_max: f64,
    pub passed: bool,
    pub sos_degree: usize,
}

/// Top-eigenvalue certificate for the degree-`2k` central moments of `points`
/// about their empirical mean.
pub fn certify_moment_bound(points: &[Vec<f64>], k: usize, bound: f64) -> Result<MomentCertificate> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let mu = mean(points);
    let mm = empirical_moment_matrix(points, k, &mu)?;
    let lambda_max = mm.lambda_max()?;
    Ok(MomentCertificate {
        degree: 2 * k,
        bound,
        lambda_max,
        passed: lambda_max <= bound,
        sos_degree: 2 * k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MzReport {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    /// Monte Carlo estimate of `E[(sum_i (p_i - E p))^k]`.
    pub lhs: f64,
    /// Per-summand degree-`k` central moment.
    #[serde(rename = "M")]
    pub m: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub tolerance: f64,
    pub violated: bool,
}

pub const MZ_TOLERANCE: f64 = 0.2;

/// Monte Carlo check of `E[(sum_i (p_i - mean))^k] <= (kn)^{k/2} M` for i.i.d.
/// scalar draws. When `exact_m` is `None` the per-summand moment is estimated
/// from the same draws.
pub fn mz_monte_carlo<R: Rng>(
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> f64,
    mean: f64,
    n: usize,
    k: usize,
    trials: usize,
    exact_m: Option<f64>,
) -> Result<MzReport> {
    if k == 0 || k % 2 == 1 {
        return Err(Error::OddOrder(k));
    }
    if trials == 0 || n == 0 {
        return Err(Error::InvalidParameter("n and trials must be positive".into()));
    }
    let mut lhs = 0.0;
    let mut per = 0.0;
    for _ in 0..trials {
        let mut s = 0.0;
        for _ in 0..n {
            let c = draw(rng) - mean;
            s += c;
            per += c.powi(k as i32);
        }
        lhs += s.powi(k as i32);
    }
    lhs /= trials as f64;
    let m = exact_m.unwrap_or(per / (trials * n) as f64);
    let rhs = ((k * n) as f64).powf(k as f64 / 2.0) * m;
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MzReport {
        n,
        k,
        trials,
        lhs,
        m,
        rhs,
        ratio,
        tolerance: MZ_TOLERANCE,
        violated: ratio > 1.0 + MZ_TOLERANCE,
    })
}

/// Marcinkiewicz-Zygmund check for `p(v, X) = (v^T X) y` along one random unit `v`.
pub fn verify_mz_bound(
    cov: &CovariateModel,
    beta: &[f64],
    sigma: f64,
    n: usize,
    k: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<MzReport> {
    if k % 2 == 1 {
        return Err(Error::OddOrder(k));
    }
    if 2 * k > cov.delta {
        return Err(Error::InvalidParameter(format!("2k = {} exceeds Delta = {}", 2 * k, cov.delta)));
    }
    let d = beta.len();
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let nv = linalg::norm(&v).max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|a| *a /= nv);
    // E[X X^T] = I gives E[(v^T X) y] = v^T beta.
    let mean = linalg::dot(&v, beta);
    let mut x = vec![0.0; d];
    mz_monte_carlo(
        rng,
        |r| {
            cov.sample_into(r, &mut x);
            let xi: f64 = StandardNormal.sample(r);
            let y = linalg::dot(&x, beta) + sigma * xi;
            linalg::dot(&v, &x) * y
        },
        mean,
        n,
        k,
        trials,
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMomentConstants {
    /// `C` in `M = C (2k)^{2k} / n^k Q (sigma^{2k} + 2 |beta|^{2k})`.
    pub c: f64,
    /// `C'` in the covariance bound `C' (|beta|^2 + sigma^2) / n`.
    pub c_cov: f64,
}

impl Default for BatchMomentConstants {
    fn default() -> Self {
        BatchMomentConstants { c: 8.0, c_cov: 3.0 }
    }
}

/// `C (2k)^{2k} / n^k Q (sigma^{2k} + 2 r^{2k})`
pub fn batch_moment_bound(c: f64, k: usize, n: usize, q: f64, sigma: f64, r: f64) -> f64 {
    let k2 = 2.0 * k as f64;
    c * k2.powf(k2) / (n as f64).powi(k as i32) * q * (sigma.powf(k2) + 2.0 * r.powf(k2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMomentReport {
    pub certificate: MomentCertificate,
    pub cov_lambda_max: f64,
    pub cov_bound: f64,
    pub cov_passed: bool,
    pub constants: BatchMomentConstants,
}

impl BatchMomentReport {
    pub fn passed(&self) -> bool {
        self.certificate.passed && self.cov_passed
    }
}

pub fn check_batch_moment_bounds(
    stats: &[BatchStatistic],
    params: &ProblemParams,
    cov: &CovariateModel,
    beta_star: &[f64],
    consts: BatchMomentConstants,
) -> Result<BatchMomentReport> {
    params.validate_with(cov)?;
    if beta_star.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            found: beta_star.len(),
        });
    }
    let points: Vec<Vec<f64>> = stats.iter().map(|s| s.z.clone()).collect();
    let bnorm = linalg::norm(beta_star);
    let m_theory = batch_moment_bound(consts.c, params.k, params.n, cov.q, params.sigma, bnorm);
    let certificate = certify_moment_bound(&points, params.k, m_theory)?;
    let mu = mean(&points);
    let cm = weighted_covariance(&points, None, &mu);
    let cov_lambda_max = linalg::top_eigen(&cm)?.0;
    let cov_bound = consts.c_cov * (bnorm * bnorm + params.sigma * params.sigma) / params.n as f64;
    Ok(BatchMomentReport {
        certificate,
        cov_lambda_max,
        cov_bound,
        cov_passed: cov_lambda_max <= cov_bound,
        constants: consts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_variance_line() {
        let pts = vec![vec![-1.0], vec![1.0]];
        let mm = empirical_moment_matrix(&pts, 1, &[0.0]).unwrap();
        assert_eq!(mm.mat[(0, 0)], 1.0);
        let c = certify_moment_bound(&pts, 1, 1.0).unwrap();
        assert!(c.passed);
        assert!(!certify_moment_bound(&pts, 1, 0.5).unwrap().passed);
    }

    #[test]
    fn overflow_is_rejected() {
        let pts = vec![vec![0.0; 17], vec![1.0; 17]];
        let err = empirical_moment_matrix(&pts, 3, &[0.0; 17]).unwrap_err();
        assert!(matches!(err, Error::DimensionOverflow { .. }));
    }

    #[test]
    fn odd_mz_order_rejected() {
        let cov = CovariateModel::new(crate::model::CovariateKind::StandardGaussian, 2);
        let mut rng = crate::rng::rng_for(1, "t", &[]);
        assert_eq!(
            verify_mz_bound(&cov, &[1.0], 0.0, 4, 3, 10, &mut rng).unwrap_err(),
            Error::OddOrder(3)
        );
    }
}

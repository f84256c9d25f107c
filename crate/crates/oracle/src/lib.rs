//! Brute-force reference computations.
//!
//! Everything here is deliberately naive: direct enumeration, dense normal
//! equations, random search. The harness and the test suites compare the
//! production code against these.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use batchreg::model::Batch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("term count {terms} exceeds the enumeration cap {cap}")]
    TooManyTerms { terms: u128, cap: usize },
    #[error("{0}")]
    Unsupported(String),
}

/// Largest number of terms an exact enumeration may visit.
pub const ENUMERATION_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: String,
    pub brute_force: f64,
    pub module_value: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    /// Agreement check: `|module - brute| <= tol * max(1, |brute|)`.
    pub fn agreement(quantity: &str, brute_force: f64, module_value: f64, tolerance: f64) -> Self {
        let rel_error = (module_value - brute_force).abs() / brute_force.abs().max(1.0);
        OracleReport {
            quantity: quantity.to_string(),
            brute_force,
            module_value,
            rel_error,
            tolerance,
            passed: rel_error <= tolerance,
        }
    }

    /// One-sided check: `brute <= module * (1 + tol)`.
    pub fn upper_bound(quantity: &str, brute_force: f64, module_value: f64, tolerance: f64) -> Self {
        let rel_error = (brute_force - module_value) / module_value.abs().max(f64::MIN_POSITIVE);
        OracleReport {
            quantity: quantity.to_string(),
            brute_force,
            module_value,
            rel_error,
            tolerance,
            passed: brute_force <= module_value + tolerance * module_value.abs(),
        }
    }
}

fn mean(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut mu = vec![0.0; d];
    for p in points {
        for j in 0..d {
            mu[j] += p[j];
        }
    }
    mu.iter().map(|v| v / points.len() as f64).collect()
}

/// `E[(v^T (z - mu))^{p}]` by a direct loop.
pub fn directional_moment(points: &[Vec<f64>], mu: &[f64], v: &[f64], p: usize) -> f64 {
    points
        .iter()
        .map(|z| {
            let s: f64 = z.iter().zip(mu).zip(v).map(|((a, b), c)| (a - b) * c).sum();
            s.powi(p as i32)
        })
        .sum::<f64>()
        / points.len() as f64
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|a| a / n).collect()
}

/// Entry `(r, c)` of the flattened degree-`2t` moment matrix, by enumerating
/// the multi-indices of row and column.
pub fn naive_moment_matrix(points: &[Vec<f64>], t: usize, mu: &[f64]) -> DMatrix<f64> {
    let d = mu.len();
    let rows = d.pow(t as u32);
    let digits = |mut f: usize| {
        let mut idx = vec![0; t];
        for slot in (0..t).rev() {
            idx[slot] = f % d;
            f /= d;
        }
        idx
    };
    let mut m = DMatrix::zeros(rows, rows);
    for r in 0..rows {
        let ri = digits(r);
        for c in 0..rows {
            let ci = digits(c);
            let mut acc = 0.0;
            for z in points {
                let mut prod = 1.0;
                for &i in ri.iter().chain(&ci) {
                    prod *= z[i] - mu[i];
                }
                acc += prod;
            }
            m[(r, c)] = acc / points.len() as f64;
        }
    }
    m
}

/// Nearest symmetric rank-one direction to a flattened `d^k` vector, by
/// higher-order power iteration from every coordinate axis.
pub fn rank_one_direction(w: &[f64], d: usize, k: usize) -> Vec<f64> {
    if k == 1 {
        return unit(w.to_vec());
    }
    let contract = |v: &[f64]| -> Vec<f64> {
        // out[i] = sum over the trailing k-1 indices of w[i, ...] * v[...]
        let tail = d.pow(k as u32 - 1);
        let mut vt = vec![1.0];
        for _ in 0..k - 1 {
            vt = vt.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        }
        (0..d)
            .map(|i| w[i * tail..(i + 1) * tail].iter().zip(&vt).map(|(a, b)| a * b).sum())
            .collect()
    };
    let value = |v: &[f64]| -> f64 {
        let mut vt = vec![1.0];
        for _ in 0..k {
            vt = vt.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        }
        w.iter().zip(&vt).map(|(a, b)| a * b).sum::<f64>().abs()
    };
    let mut best = vec![0.0; d];
    let mut best_val = -1.0;
    for start in 0..d {
        let mut v = vec![0.0; d];
        v[start] = 1.0;
        for _ in 0..100 {
            let next = unit(contract(&v));
            if next.iter().all(|a| *a == 0.0) {
                break;
            }
            v = next;
        }
        let val = value(&v);
        if val > best_val {
            best_val = val;
            best = v;
        }
    }
    best
}

/// Largest empirical degree-`2k` directional central moment found over random
/// unit directions and the rank-one direction closest to the top eigenvector of
/// the flattened moment matrix. A lower bound on the true supremum.
pub fn directional_moment_sup(points: &[Vec<f64>], k: usize, num_directions: usize, rng: &mut impl Rng) -> Result<f64, OracleError> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let d = points[0].len();
    if d > 6 {
        return Err(OracleError::Unsupported(format!("d = {d} > 6")));
    }
    let mu = mean(points);
    let mut best: f64 = 0.0;
    for _ in 0..num_directions {
        let v = unit((0..d).map(|_| StandardNormal.sample(&mut *rng)).collect());
        best = best.max(directional_moment(points, &mu, &v, 2 * k));
    }
    let m = naive_moment_matrix(points, k, &mu);
    let eig = m.symmetric_eigen();
    let top = (0..eig.eigenvalues.len())
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap_or(0);
    let w: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let v = rank_one_direction(&w, d, k);
    if v.iter().any(|a| *a != 0.0) {
        best = best.max(directional_moment(points, &mu, &v, 2 * k));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquares {
    pub beta: Vec<f64>,
    /// True when the pooled design was rank deficient and the pseudo-inverse was used.
    pub degenerate: bool,
    pub points: usize,
}

/// Least squares over the pooled points of `subset`.
pub fn subset_least_squares(batches: &[Batch], subset: &[usize]) -> LeastSquares {
    let d = batches.first().map_or(0, |b| b.d());
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    let mut points = 0;
    for &s in subset {
        let b = &batches[s];
        for i in 0..b.n() {
            let x = b.x(i);
            for r in 0..d {
                xty[r] += x[r] * b.y(i);
                for c in 0..d {
                    xtx[(r, c)] += x[r] * x[c];
                }
            }
            points += 1;
        }
    }
    let scale = xtx.amax().max(f64::MIN_POSITIVE);
    let chol = if points >= d { xtx.clone().cholesky() } else { None };
    let well_posed = chol.as_ref().is_some_and(|c| {
        let diag = c.l().diagonal();
        let lo = diag.iter().fold(f64::INFINITY, |a, v| a.min(v * v));
        lo > 1e-10 * scale
    });
    if well_posed {
        let beta = chol.unwrap().solve(&xty);
        return LeastSquares {
            beta: beta.iter().copied().collect(),
            degenerate: false,
            points,
        };
    }
    let pinv = xtx.pseudo_inverse(1e-10 * scale).unwrap_or_else(|_| DMatrix::zeros(d, d));
    LeastSquares {
        beta: (pinv * xty).iter().copied().collect(),
        degenerate: true,
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MzExact {
    pub lhs: f64,
    pub rhs: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub terms: usize,
}

/// Exact `E[(sum_i (y_i - E y))^k]` for `n` i.i.d. draws from a finite
/// distribution given as `(value, probability)` atoms, against `(kn)^{k/2} M`.
pub fn mz_exact_tiny(support: &[(f64, f64)], n: usize, k: usize) -> Result<MzExact, OracleError> {
    if support.is_empty() || support.len() > 4 {
        return Err(OracleError::Unsupported("support must have 1 to 4 atoms".into()));
    }
    if n == 0 || n > 6 || k == 0 || k > 4 {
        return Err(OracleError::Unsupported("need 1 <= n <= 6 and 1 <= k <= 4".into()));
    }
    if k % 2 == 1 {
        return Err(OracleError::Unsupported(format!("odd order {k}")));
    }
    let terms = (support.len() as u128).pow(n as u32);
    if terms > ENUMERATION_CAP as u128 {
        return Err(OracleError::TooManyTerms {
            terms,
            cap: ENUMERATION_CAP,
        });
    }
    let ey: f64 = support.iter().map(|(v, p)| v * p).sum();
    let m: f64 = support.iter().map(|(v, p)| p * (v - ey).powi(k as i32)).sum();
    let mut lhs = 0.0;
    let s = support.len();
    for code in 0..terms as usize {
        let mut c = code;
        let mut sum = 0.0;
        let mut prob = 1.0;
        for _ in 0..n {
            let (v, p) = support[c % s];
            c /= s;
            sum += v - ey;
            prob *= p;
        }
        lhs += prob * sum.powi(k as i32);
    }
    let rhs = ((k * n) as f64).powf(k as f64 / 2.0) * m;
    Ok(MzExact {
        lhs,
        rhs,
        m,
        terms: terms as usize,
    })
}

/// Best total weight found on the grid `{0, 1/q, ..., 1}^{|T|}` for the system
/// with the given rival rows, or `None` when no grid point is feasible.
/// Exponential; intended for a handful of batches.
pub fn ie_grid_search(rows: &[Vec<bool>], batches: usize, alpha: f64, q: usize) -> Option<Vec<f64>> {
    let levels = q + 1;
    let total = (levels as u128).checked_pow(batches as u32)?;
    if total > 1 << 20 {
        return None;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..total as usize {
        let mut c = code;
        let w: Vec<f64> = (0..batches)
            .map(|_| {
                let v = (c % levels) as f64 / q as f64;
                c /= levels;
                v
            })
            .collect();
        let sum: f64 = w.iter().sum();
        if sum + 1e-12 < 0.9 * alpha * batches as f64 {
            continue;
        }
        let ok = rows.iter().all(|row| {
            let hit: f64 = row.iter().zip(&w).filter(|(a, _)| **a).map(|(_, v)| v).sum();
            hit <= alpha / 20.0 * sum + 1e-12
        });
        if ok && best.as_ref().is_none_or(|(b, _)| sum > *b) {
            best = Some((sum, w));
        }
    }
    best.map(|(_, w)| w)
}

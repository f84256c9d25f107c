//! Candidate pruning through the `IE(beta; L, T, R)` feasibility system.
//!
//! A candidate survives if some weighting of the batches puts mass at least
//! `0.9 alpha |T|` on batches and gives at most an `alpha / 20` share of that
//! mass to batches where a far rival fits at least as well. Survivors are then
//! thinned so that the output is `sep`-separated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::linalg;
use crate::model::Batch;
use crate::simplex;

/// Sum of squared residuals of `beta` on a batch.
pub fn batch_sq_error(beta: &[f64], b: &Batch) -> f64 {
    (0..b.n())
        .map(|i| {
            let r = b.y(i) - linalg::dot(b.x(i), beta);
            r * r
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase2Order {
    /// Lowest trimmed loss first: mean of the `ceil(0.9 alpha |T|)` smallest batch losses.
    #[default]
    TrimmedLoss,
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    /// `c` in `sep = c (R + k alpha^{-1/k} sigma Q^{1/k} / sqrt(n))`.
    pub c_sep: f64,
    /// Required weight as a fraction of `alpha |T|`.
    pub mass_fraction: f64,
    /// Allowed rival share as a fraction of `alpha`.
    pub rival_fraction: f64,
    pub phase2: Phase2Order,
    /// Relative slack used when re-verifying a witness.
    pub verify_tol: f64,
    pub max_pivots: usize,
    pub exec: Exec,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            c_sep: 1.0,
            mass_fraction: 0.9,
            rival_fraction: 1.0 / 20.0,
            phase2: Phase2Order::TrimmedLoss,
            verify_tol: 1e-9,
            max_pivots: 100_000,
            exec: Exec::default(),
        }
    }
}

/// `c (R + k alpha^{-1/k} sigma Q^{1/k} / sqrt(n))`
pub fn separation(c: f64, radius: f64, k: usize, alpha: f64, sigma: f64, q: f64, n: usize) -> f64 {
    let kf = k as f64;
    c * (radius + kf * alpha.powf(-1.0 / kf) * sigma * q.powf(1.0 / kf) / (n as f64).sqrt())
}

/// Hard cap on the pruned list: `ceil(4 / alpha) + 1`.
pub fn list_size_bound(alpha: f64) -> usize {
    (4.0 / alpha).ceil() as usize + 1
}

/// Batches needed for pruning: `C min(ln |L|, d^2) ln(1/delta) / alpha^3`.
pub fn prune_sample_size(c: f64, list_len: usize, d: usize, delta: f64, alpha: f64) -> f64 {
    let complexity = (list_len.max(2) as f64).ln().min((d * d) as f64);
    c * complexity * (1.0 / delta).ln() / alpha.powi(3)
}

/// Smallest `m` with `P(Bin(m, alpha) < f alpha m) <= delta` by the lower-tail
/// Chernoff bound `exp(-(1-f)^2 alpha m / 2)`.
pub fn chernoff_batches(alpha: f64, f: f64, delta: f64) -> usize {
    let eps = 1.0 - f;
    (2.0 * (1.0 / delta).ln() / (eps * eps * alpha)).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneParams {
    pub alpha: f64,
    pub sep: f64,
    pub config: PruneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingFunction {
    pub w: Vec<f64>,
}

impl WeightingFunction {
    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Indicator rows of `IE(beta; L, T)` for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct IESystem {
    pub target: usize,
    /// Indices into `L` of candidates at distance at least `sep` from the target.
    pub rivals: Vec<usize>,
    /// `rows[j][B] = 1` when rival `j` fits batch `B` at least as well as the target.
    pub rows: Vec<Vec<bool>>,
    pub batches: usize,
    pub sep: f64,
}

/// Loss of every candidate on every batch, `losses[i][B]`.
///
/// Batches larger than the dimension go through `y'y - 2 b'X'y + b'X'X b`.
pub fn loss_table(list: &[Vec<f64>], batches: &[Batch], ex: Exec) -> Vec<Vec<f64>> {
    let d = batches.first().map_or(0, |b| b.d());
    if batches.first().is_none_or(|b| b.n() <= d) {
        return exec::map(ex, list, |_, beta| batches.iter().map(|b| batch_sq_error(beta, b)).collect());
    }
    let grams = exec::map(ex, batches, |_, b| Gram::new(b));
    exec::map(ex, list, |_, beta| grams.iter().map(|g| g.loss(beta)).collect())
}

struct Gram {
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
}

impl Gram {
    fn new(b: &Batch) -> Self {
        let d = b.d();
        let mut xtx = vec![0.0; d * d];
        let mut xty = vec![0.0; d];
        let mut yty = 0.0;
        for i in 0..b.n() {
            let (x, y) = (b.x(i), b.y(i));
            for r in 0..d {
                xty[r] += x[r] * y;
                for c in r..d {
                    xtx[r * d + c] += x[r] * x[c];
                }
            }
            yty += y * y;
        }
        Gram { xtx, xty, yty }
    }

    fn loss(&self, beta: &[f64]) -> f64 {
        let d = beta.len();
        let mut quad = 0.0;
        for r in 0..d {
            let mut row = 0.5 * self.xtx[r * d + r] * beta[r];
            for c in r + 1..d {
                row += self.xtx[r * d + c] * beta[c];
            }
            quad += 2.0 * beta[r] * row;
        }
        (self.yty - 2.0 * linalg::dot(beta, &self.xty) + quad).max(0.0)
    }
}

impl IESystem {
    pub fn build(target: usize, list: &[Vec<f64>], losses: &[Vec<f64>], sep: f64) -> Self {
        let beta = &list[target];
        let rivals: Vec<usize> = (0..list.len())
            .filter(|&j| linalg::distance(&list[j], beta) >= sep)
            .collect();
        let own = &losses[target];
        let rows = rivals
            .iter()
            .map(|&j| losses[j].iter().zip(own).map(|(lj, lb)| lj <= lb).collect())
            .collect();
        IESystem {
            target,
            rivals,
            rows,
            batches: own.len(),
            sep,
        }
    }

    /// Checks a witness against every constraint, with slack `verify_tol * |T|`.
    pub fn verify(&self, w: &WeightingFunction, alpha: f64, cfg: &PruneConfig) -> bool {
        verify_rows(self, w, alpha, cfg)
    }

    /// Finds a witness, or `None` when even the largest feasible total weight
    /// is below the mass requirement.
    pub fn solve(&self, alpha: f64, cfg: &PruneConfig) -> Option<WeightingFunction> {
        let hits: Vec<usize> = self.rows.iter().map(|r| r.iter().filter(|a| **a).count()).collect();
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| hits[b].cmp(&hits[a]).then(a.cmp(&b)));
        solve_rows(self, &order, alpha, cfg)
    }
}

/// Indicator rows, possibly computed on demand.
trait Rows {
    fn batches(&self) -> usize;
    fn len(&self) -> usize;
    fn get(&self, row: usize, batch: usize) -> bool;
}

impl Rows for IESystem {
    fn batches(&self) -> usize {
        self.batches
    }
    fn len(&self) -> usize {
        self.rows.len()
    }
    fn get(&self, row: usize, batch: usize) -> bool {
        self.rows[row][batch]
    }
}

/// Rows read straight from a loss table.
struct LossRows<'a> {
    own: &'a [f64],
    rivals: Vec<&'a [f64]>,
}

impl Rows for LossRows<'_> {
    fn batches(&self) -> usize {
        self.own.len()
    }
    fn len(&self) -> usize {
        self.rivals.len()
    }
    fn get(&self, row: usize, batch: usize) -> bool {
        self.rivals[row][batch] <= self.own[batch]
    }
}

fn verify_rows(rows: &impl Rows, w: &WeightingFunction, alpha: f64, cfg: &PruneConfig) -> bool {
    let nb = w.w.len() as f64;
    let slack = cfg.verify_tol * nb.max(1.0);
    if w.w.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return false;
    }
    let total = w.total();
    if total < cfg.mass_fraction * alpha * nb - slack {
        return false;
    }
    let support: Vec<usize> = (0..w.w.len()).filter(|&b| w.w[b] > 0.0).collect();
    (0..rows.len()).all(|j| {
        let hit: f64 = support.iter().filter(|&&b| rows.get(j, b)).map(|&b| w.w[b]).sum();
        hit <= cfg.rival_fraction * alpha * total + slack
    })
}

/// Batches that no rival fits as well as the target form a witness on their
/// own when there are enough of them. Otherwise the LP is solved over a
/// growing subset of rows, starting from the front of `order`: an optimum
/// below the requirement on a subset already proves infeasibility, and an
/// optimum that satisfies every row is optimal for the full system.
fn solve_rows(rows: &impl Rows, order: &[usize], alpha: f64, cfg: &PruneConfig) -> Option<WeightingFunction> {
    let nb = rows.batches();
    if nb == 0 {
        return None;
    }
    let need = cfg.mass_fraction * alpha * nb as f64;
    let slack = cfg.verify_tol * nb as f64;
    let share = cfg.rival_fraction * alpha;

    let clean: Vec<f64> = (0..nb)
        .map(|b| if order.iter().any(|&j| rows.get(j, b)) { 0.0 } else { 1.0 })
        .collect();
    if clean.iter().sum::<f64>() >= need {
        let w = WeightingFunction { w: clean };
        if verify_rows(rows, &w, alpha, cfg) {
            return Some(w);
        }
    }

    let mut active: Vec<usize> = order.iter().take(ROW_BATCH).copied().collect();
    loop {
        let w = solve_active(rows, &active, share, cfg);
        let total = w.total();
        if total < need - slack {
            return None;
        }
        let support: Vec<usize> = (0..nb).filter(|&b| w.w[b] > 0.0).collect();
        let mut violated: Vec<(f64, usize)> = (0..rows.len())
            .filter(|j| !active.contains(j))
            .filter_map(|j| {
                let hit: f64 = support.iter().filter(|&&b| rows.get(j, b)).map(|&b| w.w[b]).sum();
                let excess = hit - share * total;
                (excess > slack).then_some((excess, j))
            })
            .collect();
        if violated.is_empty() {
            return verify_rows(rows, &w, alpha, cfg).then_some(w);
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        active.extend(violated.iter().take(ROW_BATCH).map(|v| v.1));
    }
}

/// LP over the rows in `active`. Batches with the same indicator pattern are
/// interchangeable, so each pattern becomes one variable bounded by its
/// multiplicity.
fn solve_active(rows: &impl Rows, active: &[usize], share: f64, cfg: &PruneConfig) -> WeightingFunction {
    let nb = rows.batches();
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for b in 0..nb {
        let key: Vec<bool> = active.iter().map(|&j| rows.get(j, b)).collect();
        groups.entry(key).or_default().push(b);
    }
    let keys: Vec<&Vec<bool>> = groups.keys().collect();
    let upper: Vec<f64> = groups.values().map(|v| v.len() as f64).collect();
    let a: Vec<Vec<f64>> = (0..active.len())
        .map(|j| keys.iter().map(|k| if k[j] { 1.0 - share } else { -share }).collect())
        .collect();
    let c = vec![1.0; keys.len()];
    let x = simplex::maximize(&a, &c, &upper, cfg.max_pivots);
    let mut w = vec![0.0; nb];
    for (g, members) in groups.values().enumerate() {
        let per = (x[g] / members.len() as f64).clamp(0.0, 1.0);
        for &b in members {
            w[b] = per;
        }
    }
    WeightingFunction { w }
}

/// Rival rows added to the LP per round.
const ROW_BATCH: usize = 8;

/// Feasibility of `IE(beta; L, T)`; `beta` is compared against every far member of `list`.
pub fn ie_feasible(beta: &[f64], list: &[Vec<f64>], batches: &[Batch], params: &PruneParams) -> Result<Option<WeightingFunction>> {
    if batches.is_empty() {
        return Err(Error::InsufficientBatches { needed: 1, got: 0 });
    }
    let mut all = Vec::with_capacity(list.len() + 1);
    all.push(beta.to_vec());
    all.extend(list.iter().cloned());
    check_dims(&all, batches)?;
    let losses = loss_table(&all, batches, params.config.exec);
    let rank = loss_rank(&losses, params);
    Ok(solve_with_losses(0, &all, &losses, &rank, params))
}

/// Candidates sorted by trimmed loss; rivals are tried in this order.
fn loss_rank(losses: &[Vec<f64>], params: &PruneParams) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    let key: Vec<f64> = losses
        .iter()
        .map(|l| trimmed_loss(l, params.alpha, params.config.mass_fraction))
        .collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    order
}

fn solve_with_losses(
    target: usize,
    list: &[Vec<f64>],
    losses: &[Vec<f64>],
    rank: &[usize],
    params: &PruneParams,
) -> Option<WeightingFunction> {
    let beta = &list[target];
    let rivals: Vec<usize> = rank
        .iter()
        .copied()
        .filter(|&j| linalg::distance(&list[j], beta) >= params.sep)
        .collect();
    let nb = losses[target].len();
    if rivals.is_empty() {
        // Only the mass constraint remains; the all-ones weighting satisfies it.
        return Some(WeightingFunction { w: vec![1.0; nb] });
    }
    let rows = LossRows {
        own: &losses[target],
        rivals: rivals.iter().map(|&j| losses[j].as_slice()).collect(),
    };
    let order: Vec<usize> = (0..rivals.len()).collect();
    solve_rows(&rows, &order, params.alpha, &params.config)
}

fn check_dims(list: &[Vec<f64>], batches: &[Batch]) -> Result<()> {
    let d = batches[0].d();
    for v in list {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub kept: Vec<Vec<f64>>,
    /// Indices into the input list of the kept candidates.
    pub kept_indices: Vec<usize>,
    /// Total weight of the feasibility witness of each kept candidate.
    pub witness_mass: Vec<f64>,
    /// Indices of candidates whose system was feasible.
    pub survivors: Vec<usize>,
    pub sep: f64,
}

/// Mean of the `ceil(mass_fraction alpha |T|)` smallest batch losses.
pub fn trimmed_loss(losses: &[f64], alpha: f64, mass_fraction: f64) -> f64 {
    let keep = ((mass_fraction * alpha * losses.len() as f64).ceil() as usize).clamp(1, losses.len().max(1));
    let mut v = losses.to_vec();
    v.sort_by(f64::total_cmp);
    v[..keep.min(v.len())].iter().sum::<f64>() / keep as f64
}

/// Greedy `sep`-net over `order`. Returns indices of the kept entries.
pub fn separate(list: &[Vec<f64>], order: &[usize], sep: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for &i in order {
        if kept.iter().all(|&j| linalg::distance(&list[i], &list[j]) >= sep) {
            kept.push(i);
        }
    }
    kept
}

pub fn prune(list: &[Vec<f64>], batches: &[Batch], params: &PruneParams) -> Result<PruneOutcome> {
    if list.is_empty() {
        return Err(Error::InvalidParameter("candidate list is empty".into()));
    }
    if batches.is_empty() {
        return Err(Error::InsufficientBatches { needed: 1, got: 0 });
    }
    check_dims(list, batches)?;
    let ex = params.config.exec;
    let losses = loss_table(list, batches, ex);
    let rank = loss_rank(&losses, params);
    let witness = exec::map_range(ex, list.len(), |i| {
        solve_with_losses(i, list, &losses, &rank, params).map(|w| w.total())
    });
    let survivors: Vec<usize> = (0..list.len()).filter(|&i| witness[i].is_some()).collect();
    let order = phase2_order(&survivors, &losses, params);
    let kept_indices = separate(list, &order, params.sep);
    let bound = list_size_bound(params.alpha);
    if kept_indices.len() > bound {
        return Err(Error::Invariant(format!(
            "pruned list has {} candidates, bound is {}",
            kept_indices.len(),
            bound
        )));
    }
    Ok(PruneOutcome {
        kept: kept_indices.iter().map(|&i| list[i].clone()).collect(),
        witness_mass: kept_indices.iter().map(|&i| witness[i].unwrap_or(0.0)).collect(),
        kept_indices,
        survivors,
        sep: params.sep,
    })
}

/// Scan order used by phase 2.
pub fn phase2_order(indices: &[usize], losses: &[Vec<f64>], params: &PruneParams) -> Vec<usize> {
    let mut order = indices.to_vec();
    if params.config.phase2 == Phase2Order::TrimmedLoss {
        let key: BTreeMap<usize, f64> = indices
            .iter()
            .map(|&i| (i, trimmed_loss(&losses[i], params.alpha, params.config.mass_fraction)))
            .collect();
        order.sort_by(|a, b| key[a].total_cmp(&key[b]).then(a.cmp(b)));
    }
    order
}

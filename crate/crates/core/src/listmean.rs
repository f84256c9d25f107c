//! List-decodable mean estimation by a recursive multifilter.
//!
//! Each branch of the recursion owns a weight vector over the input points and
//! repeats: emit the weighted mean if the covariance and the degree-`2k`
//! certificate are both small; otherwise split along a direction where the
//! points are clearly bimodal, or filter points with large degree-`k`
//! polynomial scores. A branch that exhausts its filter budget is split in
//! two overlapping halves at a random threshold.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::linalg;
use crate::moments::{self, MAX_FLAT_DIM};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::{self, SymIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Zero point `i` with probability `s_i / max_j s_j`.
    #[default]
    Randomized,
    /// Zero the highest-scoring points until a fixed fraction of weight is gone.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ListMeanConfig {
    /// List size cap is `ceil(c_list / alpha)`.
    pub c_list: f64,
    /// Emit when the top covariance eigenvalue is at most `c2 * M^{1/k}`.
    pub c2: f64,
    /// ...and the degree-`2k` top eigenvalue is at most `cert_slack * M`.
    pub cert_slack: f64,
    pub filter_mode: FilterMode,
    /// Weight fraction removed per deterministic filter step.
    pub deterministic_fraction: f64,
    /// Filtering stops once this fraction of a branch's entry weight is gone.
    pub filter_budget: f64,
    pub max_filter_steps: usize,
    /// A direction counts as bimodal when the best 1-D two-means split leaves
    /// at most this fraction of the total sum of squares.
    pub split_ratio: f64,
    /// Number of top covariance directions tested for bimodality.
    pub split_directions: usize,
    /// An empty slab at least this wide, in units of `M^{1/(2k)}`, with enough
    /// weight on both sides also triggers a disjoint split.
    pub gap_factor: f64,
    /// Overlap of random splits, in units of `M^{1/(2k)}`.
    pub margin_factor: f64,
    /// A random split whose halves both keep this fraction of the weight is
    /// not taken; the branch emits instead.
    pub split_overlap: f64,
    /// Depth cap is `ceil(log2(1/alpha)) + extra_depth`.
    pub extra_depth: usize,
    /// Candidates closer than `dedup_factor * M^{1/(2k)}` to a preferred one are dropped.
    pub dedup_factor: f64,
    /// At most `ceil(c_uncertified / alpha)` uncertified candidates are returned.
    pub c_uncertified: f64,
    /// Branches lighter than `branch_floor * alpha * N` are dropped.
    pub branch_floor: f64,
    pub exec: Exec,
}

impl Default for ListMeanConfig {
    fn default() -> Self {
        ListMeanConfig {
            c_list: 8.0,
            c2: 10.0,
            cert_slack: 1.0,
            filter_mode: FilterMode::Randomized,
            deterministic_fraction: 0.02,
            filter_budget: 0.05,
            max_filter_steps: 16,
            split_ratio: 0.3,
            split_directions: 3,
            gap_factor: 2.0,
            margin_factor: 3.0,
            split_overlap: 0.9,
            extra_depth: 4,
            dedup_factor: 1.0,
            c_uncertified: 1.0,
            branch_floor: 0.5,
            exec: Exec::default(),
        }
    }
}

impl ListMeanConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c_list >= 1.0
            && self.c2 > 0.0
            && self.cert_slack > 0.0
            && self.deterministic_fraction > 0.0
            && self.deterministic_fraction <= 1.0
            && (0.0..=1.0).contains(&self.filter_budget)
            && self.split_ratio >= 0.0
            && self.margin_factor >= 0.0
            && self.branch_floor >= 0.0
            && self.c_uncertified >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid list-mean configuration".into()))
        }
    }

    pub fn list_cap(&self, alpha: f64) -> usize {
        (self.c_list / alpha).ceil() as usize
    }

    pub fn depth_cap(&self, alpha: f64) -> usize {
        (1.0 / alpha).log2().ceil().max(0.0) as usize + self.extra_depth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCandidate {
    pub mean: Vec<f64>,
    /// Weight of every input point in the branch that produced this mean.
    pub support: Vec<f64>,
    /// False when the branch hit the depth cap without passing both checks.
    pub certified: bool,
    pub depth: usize,
}

impl MeanCandidate {
    pub fn support_weight(&self) -> f64 {
        self.support.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListMeanStats {
    pub filter_steps: usize,
    pub bimodal_splits: usize,
    pub random_splits: usize,
    pub dropped_branches: usize,
    pub uncertified: usize,
    pub duplicates: usize,
    pub truncated: usize,
}

impl ListMeanStats {
    fn merge(mut self, o: ListMeanStats) -> Self {
        self.filter_steps += o.filter_steps;
        self.bimodal_splits += o.bimodal_splits;
        self.random_splits += o.random_splits;
        self.dropped_branches += o.dropped_branches;
        self.uncertified += o.uncertified;
        self.duplicates += o.duplicates;
        self.truncated += o.truncated;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCandidateList {
    pub candidates: Vec<MeanCandidate>,
    pub stats: ListMeanStats,
}

impl MeanCandidateList {
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.candidates.iter().map(|c| c.mean.clone()).collect()
    }
}

/// Weights and summary of one multifilter branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub depth: usize,
}

impl FilterState {
    pub fn new(points: &[Vec<f64>], weights: Vec<f64>, depth: usize) -> Self {
        let mean = moments::weighted_mean(points, Some(&weights));
        FilterState { weights, mean, depth }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// What the branch checks found at the current weights.
struct Assessment {
    cov_eig: linalg::SortedEigen,
    cov_ok: bool,
    cert_ok: bool,
    /// Top eigenvector of the degree-`2k` matrix, when `k >= 2`.
    cert_dir: Option<DVector<f64>>,
}

struct Problem<'a> {
    points: &'a [Vec<f64>],
    alpha: f64,
    k: usize,
    m: f64,
    cfg: &'a ListMeanConfig,
    floor: f64,
    depth_cap: usize,
}

impl Problem<'_> {
    fn assess(&self, st: &FilterState) -> Result<Assessment> {
        let cov = moments::weighted_covariance(self.points, Some(&st.weights), &st.mean);
        let cov_eig = linalg::sym_eigen(&cov)?;
        let cov_ok = cov_eig.values[0] <= self.cfg.c2 * self.m.powf(1.0 / self.k as f64);
        let (cert_ok, cert_dir) = if self.k >= 2 {
            let mm = moments::weighted_moment_matrix(self.points, Some(&st.weights), self.k, &st.mean, Exec::Sequential)?;
            let (lambda, v) = mm.top_eigen()?;
            (lambda <= self.cfg.cert_slack * self.m, Some(v))
        } else {
            (true, None)
        };
        Ok(Assessment {
            cov_eig,
            cov_ok,
            cert_ok,
            cert_dir,
        })
    }

    fn projections(&self, mean: &[f64], dir: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.iter().zip(mean).zip(dir).map(|((a, b), c)| (a - b) * c).sum())
            .collect()
    }

    fn scores(&self, st: &FilterState, a: &Assessment) -> Vec<f64> {
        match &a.cert_dir {
            Some(v) if !a.cert_ok => degree_k_scores(self.points, &st.weights, &st.mean, v, self.k),
            _ => {
                let u: Vec<f64> = a.cov_eig.vectors.column(0).iter().copied().collect();
                self.projections(&st.mean, &u)
                    .into_iter()
                    .zip(&st.weights)
                    .map(|(p, w)| if *w > 0.0 { p * p } else { 0.0 })
                    .collect()
            }
        }
    }

    fn run(&self, weights: Vec<f64>, depth: usize, seed: u64) -> Result<(Vec<MeanCandidate>, ListMeanStats)> {
        let mut stats = ListMeanStats::default();
        let entry = weights.clone();
        let entry_weight: f64 = entry.iter().sum();
        if entry_weight < self.floor || entry_weight <= 0.0 {
            stats.dropped_branches += 1;
            return Ok((vec![], stats));
        }
        let mut rng: ChaCha8Rng = rng_for(seed, "listmean-branch", &[]);
        let mut st = FilterState::new(self.points, weights, depth);
        let mut removed = 0.0;
        let mut steps = 0;
        loop {
            if st.total_weight() < self.floor {
                stats.dropped_branches += 1;
                return Ok((vec![], stats));
            }
            let a = self.assess(&st)?;
            if a.cov_ok && a.cert_ok {
                return Ok((vec![self.emit(st, true)], stats));
            }
            if depth >= self.depth_cap {
                stats.uncertified += 1;
                return Ok((vec![self.emit(st, false)], stats));
            }
            if let Some((left, right)) = self.bimodal_split(&st, &a) {
                stats.bimodal_splits += 1;
                return self.recurse(left, right, depth, seed, stats);
            }
            if a.cov_ok && removed < self.cfg.filter_budget * entry_weight && steps < self.cfg.max_filter_steps {
                let scores = self.scores(&st, &a);
                removed += filter_weights(&mut st.weights, &scores, self.cfg, &mut rng);
                st.mean = moments::weighted_mean(self.points, Some(&st.weights));
                steps += 1;
                stats.filter_steps += 1;
                continue;
            }
            let base = if a.cov_ok { &entry } else { &st.weights };
            let (left, right) = self.random_split(base, &st, &a, &mut rng);
            let keep = self.cfg.split_overlap * base.iter().sum::<f64>();
            if left.iter().sum::<f64>() >= keep && right.iter().sum::<f64>() >= keep {
                // The points are a single blob at the scale of the margin.
                stats.uncertified += 1;
                return Ok((vec![self.emit(st, false)], stats));
            }
            stats.random_splits += 1;
            return self.recurse(left, right, depth, seed, stats);
        }
    }

    fn recurse(
        &self,
        left: Vec<f64>,
        right: Vec<f64>,
        depth: usize,
        seed: u64,
        stats: ListMeanStats,
    ) -> Result<(Vec<MeanCandidate>, ListMeanStats)> {
        let (l, r) = exec::join(
            self.cfg.exec,
            || self.run(left, depth + 1, derive_seed(seed, "child", &[0])),
            || self.run(right, depth + 1, derive_seed(seed, "child", &[1])),
        );
        let (mut lc, ls) = l?;
        let (rc, rs) = r?;
        lc.extend(rc);
        Ok((lc, stats.merge(ls).merge(rs)))
    }

    fn emit(&self, st: FilterState, certified: bool) -> MeanCandidate {
        MeanCandidate {
            mean: st.mean,
            support: st.weights,
            certified,
            depth: st.depth,
        }
    }

    /// Disjoint split along one of the top covariance directions, at a wide
    /// empty gap or at the two-means cut when the direction is bimodal.
    fn bimodal_split(&self, st: &FilterState, a: &Assessment) -> Option<(Vec<f64>, Vec<f64>)> {
        let dirs = self.cfg.split_directions.min(a.cov_eig.values.len());
        let width = self.cfg.gap_factor * self.m.powf(0.5 / self.k as f64);
        let projs: Vec<Vec<f64>> = (0..dirs)
            .map(|j| {
                let u: Vec<f64> = a.cov_eig.vectors.column(j).iter().copied().collect();
                self.projections(&st.mean, &u)
            })
            .collect();
        let cut_at = |proj: &Vec<f64>, cut: f64| {
            let left = st.weights.iter().zip(proj).map(|(w, p)| if *p <= cut { *w } else { 0.0 }).collect();
            let right = st.weights.iter().zip(proj).map(|(w, p)| if *p > cut { *w } else { 0.0 }).collect();
            (left, right)
        };
        for proj in &projs {
            if let Some(cut) = widest_gap(proj, &st.weights, self.floor, width) {
                return Some(cut_at(proj, cut));
            }
        }
        for proj in &projs {
            if let Some((ratio, cut)) = two_means_1d(proj, &st.weights) {
                if ratio <= self.cfg.split_ratio {
                    return Some(cut_at(proj, cut));
                }
            }
        }
        None
    }

    /// Overlapping split of the entry weights at a random interquartile threshold
    /// along the top covariance direction.
    fn random_split(&self, entry: &[f64], st: &FilterState, a: &Assessment, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
        let u: Vec<f64> = a.cov_eig.vectors.column(0).iter().copied().collect();
        let proj = self.projections(&st.mean, &u);
        let lo = weighted_percentile(&proj, entry, 0.25);
        let hi = weighted_percentile(&proj, entry, 0.75);
        let thr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let margin = self.cfg.margin_factor * self.m.powf(0.5 / self.k as f64);
        let left = entry.iter().zip(&proj).map(|(w, p)| if *p <= thr + margin { *w } else { 0.0 }).collect();
        let right = entry.iter().zip(&proj).map(|(w, p)| if *p >= thr - margin { *w } else { 0.0 }).collect();
        (left, right)
    }
}

/// `s_i = <(x_i - mu)^{(x)k}, v>^2` for a flattened direction `v` of length `d^k`.
pub fn degree_k_scores(points: &[Vec<f64>], weights: &[f64], mu: &[f64], v: &DVector<f64>, k: usize) -> Vec<f64> {
    let d = mu.len();
    let idx = SymIndex::get(d, k);
    let off = idx.offset(k);
    let cnt = idx.count(k);
    let mut folded = vec![0.0; cnt];
    for (r, s) in idx.fold_map().iter().enumerate() {
        folded[*s as usize] += v[r];
    }
    let mut buf = vec![0.0; idx.monomial_len()];
    let mut z = vec![0.0; d];
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            if *w <= 0.0 {
                return 0.0;
            }
            for j in 0..d {
                z[j] = p[j] - mu[j];
            }
            idx.monomials_to(&z, &mut buf, k);
            let s: f64 = folded.iter().zip(&buf[off..off + cnt]).map(|(a, b)| a * b).sum();
            s * s
        })
        .collect()
}

/// One filter step. Returns the weight removed; weights only ever decrease.
pub fn filter_weights(weights: &mut [f64], scores: &[f64], cfg: &ListMeanConfig, rng: &mut impl Rng) -> f64 {
    let smax = scores
        .iter()
        .zip(weights.iter())
        .filter(|(_, w)| **w > 0.0)
        .map(|(s, _)| *s)
        .fold(0.0, f64::max);
    if smax <= 0.0 {
        return 0.0;
    }
    let mut removed = 0.0;
    match cfg.filter_mode {
        FilterMode::Randomized => {
            for (w, s) in weights.iter_mut().zip(scores) {
                if *w > 0.0 && rng.random::<f64>() < s / smax {
                    removed += *w;
                    *w = 0.0;
                }
            }
        }
        FilterMode::Deterministic => {
            let total: f64 = weights.iter().sum();
            let target = cfg.deterministic_fraction * total;
            let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            for i in order {
                if removed >= target {
                    break;
                }
                removed += weights[i];
                weights[i] = 0.0;
            }
        }
    }
    removed
}

/// Best weighted two-means split of scalar values. Returns the within-cluster
/// share of the total sum of squares and the cut point.
pub fn two_means_1d(values: &[f64], weights: &[f64]) -> Option<(f64, f64)> {
    let mut items: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    if items.len() < 2 {
        return None;
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut sw, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (v, w) in &items {
        sw += w;
        s1 += w * v;
        s2 += w * v * v;
    }
    let total = (s2 - s1 * s1 / sw).max(0.0);
    if total <= 0.0 {
        return None;
    }
    let (mut lw, mut l1, mut l2) = (0.0, 0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..items.len() - 1 {
        let (v, w) = items[i];
        lw += w;
        l1 += w * v;
        l2 += w * v * v;
        if items[i + 1].0 <= v {
            continue;
        }
        let rw = sw - lw;
        let within = (l2 - l1 * l1 / lw) + ((s2 - l2) - (s1 - l1) * (s1 - l1) / rw);
        let ratio = (within / total).max(0.0);
        if best.is_none_or(|(b, _)| ratio < b) {
            best = Some((ratio, 0.5 * (v + items[i + 1].0)));
        }
    }
    best
}

/// Midpoint of the widest empty interval between consecutive values that is at
/// least `min_width` wide and leaves at least `min_side` weight on each side.
pub fn widest_gap(values: &[f64], weights: &[f64], min_side: f64, min_width: f64) -> Option<f64> {
    let mut items: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    if items.len() < 2 {
        return None;
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..items.len() - 1 {
        acc += items[i].1;
        let gap = items[i + 1].0 - items[i].0;
        if gap >= min_width && acc >= min_side && total - acc >= min_side && best.is_none_or(|(g, _)| gap > g) {
            best = Some((gap, 0.5 * (items[i].0 + items[i + 1].0)));
        }
    }
    best.map(|(_, c)| c)
}

pub fn weighted_percentile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut items: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    if items.is_empty() {
        return 0.0;
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    for (v, w) in &items {
        acc += w;
        if acc >= q * total {
            return *v;
        }
    }
    items[items.len() - 1].0
}

/// Returns at most `ceil(c_list / alpha)` candidate means; see the module docs.
pub fn list_decode_mean(
    points: &[Vec<f64>],
    alpha: f64,
    k: usize,
    m: f64,
    cfg: &ListMeanConfig,
    seed: u64,
) -> Result<MeanCandidateList> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter("alpha must lie in (0, 1]".into()));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidParameter("M must be positive".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let needed = (2.0 / alpha).ceil() as usize;
    if points.len() < needed {
        return Err(Error::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: p.len(),
        });
    }
    tensor::checked_rows(d, k, MAX_FLAT_DIM)?;
    let n = points.len();
    let problem = Problem {
        points,
        alpha,
        k,
        m,
        cfg,
        floor: cfg.branch_floor * alpha * n as f64,
        depth_cap: cfg.depth_cap(alpha),
    };
    let (candidates, mut stats) = problem.run(vec![1.0; n], 0, seed)?;

    // Certified before uncertified, heaviest first; drop near-duplicates, then cap.
    let weight: Vec<f64> = candidates.iter().map(|c| c.support_weight()).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        (candidates[b].certified.cmp(&candidates[a].certified))
            .then(weight[b].total_cmp(&weight[a]))
            .then(a.cmp(&b))
    });
    let radius = cfg.dedup_factor * m.powf(0.5 / k as f64);
    let uncertified_cap = (cfg.c_uncertified / alpha).ceil() as usize;
    let mut keep: Vec<usize> = Vec::new();
    let mut uncertified = 0;
    for i in order {
        if keep.iter().any(|&j| linalg::distance(&candidates[i].mean, &candidates[j].mean) < radius) {
            stats.duplicates += 1;
        } else if !candidates[i].certified && uncertified >= uncertified_cap {
            stats.truncated += 1;
        } else {
            uncertified += usize::from(!candidates[i].certified);
            keep.push(i);
        }
    }
    let cap = cfg.list_cap(problem.alpha);
    if keep.len() > cap {
        stats.truncated += keep.len() - cap;
        keep.truncate(cap);
    }
    keep.sort_unstable();
    let mut slots: Vec<Option<MeanCandidate>> = candidates.into_iter().map(Some).collect();
    let candidates = keep.into_iter().filter_map(|i| slots[i].take()).collect();
    Ok(MeanCandidateList { candidates, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_means_finds_gap() {
        let v = [0.0, 0.1, 0.2, 10.0, 10.1];
        let (ratio, cut) = two_means_1d(&v, &[1.0; 5]).unwrap();
        assert!(ratio < 0.01);
        assert!(cut > 0.2 && cut < 10.0);
    }

    #[test]
    fn deterministic_filter_removes_top_scores() {
        let mut w = vec![1.0; 100];
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let cfg = ListMeanConfig {
            filter_mode: FilterMode::Deterministic,
            ..Default::default()
        };
        let mut rng = rng_for(0, "t", &[]);
        let removed = filter_weights(&mut w, &scores, &cfg, &mut rng);
        assert_eq!(removed, 2.0);
        assert_eq!(w[99], 0.0);
        assert_eq!(w[98], 0.0);
        assert_eq!(w[97], 1.0);
    }

    #[test]
    fn percentile_of_uniform_grid() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(weighted_percentile(&v, &[1.0; 100], 0.25), 25.0);
    }
}

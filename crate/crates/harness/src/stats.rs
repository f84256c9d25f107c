//! Aggregates over CSV rows.

use batchreg::pruning::list_size_bound;
use serde::{Deserialize, Serialize};

use crate::experiment::TrialRow;

/// Median; the mean of the two middle values for even counts. NaN when empty.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub d: usize,
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub m: usize,
    pub trials: usize,
    pub median_min_error: f64,
    pub median_baseline_error: f64,
    pub max_list_size: usize,
    pub list_size_bound: usize,
}

/// Slope of median error against `n` for cells that differ only in `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub d: usize,
    pub alpha: f64,
    pub k: usize,
    pub m: usize,
    pub n: Vec<usize>,
    pub median_min_error: Vec<f64>,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
    pub slopes: Vec<SlopeSummary>,
}

impl Summary {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        let key = |r: &TrialRow| (r.d, r.n, r.alpha.to_bits(), r.k, r.m);
        let mut keys: Vec<_> = rows.iter().map(key).collect();
        keys.dedup();
        let mut cells = Vec::new();
        for kk in keys {
            if cells.iter().any(|c: &CellSummary| (c.d, c.n, c.alpha.to_bits(), c.k, c.m) == kk) {
                continue;
            }
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| key(r) == kk).collect();
            let (d, n, a, k, m) = kk;
            let alpha = f64::from_bits(a);
            cells.push(CellSummary {
                d,
                n,
                alpha,
                k,
                m,
                trials: mine.len(),
                median_min_error: median(mine.iter().map(|r| r.min_error)),
                median_baseline_error: median(mine.iter().map(|r| r.baseline_error)),
                max_list_size: mine.iter().map(|r| r.list_size).max().unwrap_or(0),
                list_size_bound: list_size_bound(alpha),
            });
        }
        let mut slopes: Vec<SlopeSummary> = Vec::new();
        for c in &cells {
            let group = (c.d, c.alpha.to_bits(), c.k, c.m);
            if slopes.iter().any(|s| (s.d, s.alpha.to_bits(), s.k, s.m) == group) {
                continue;
            }
            let mut pts: Vec<(usize, f64)> = cells
                .iter()
                .filter(|o| (o.d, o.alpha.to_bits(), o.k, o.m) == group)
                .map(|o| (o.n, o.median_min_error))
                .collect();
            if pts.len() < 2 {
                continue;
            }
            pts.sort_by_key(|p| p.0);
            let xs: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            slopes.push(SlopeSummary {
                d: c.d,
                alpha: c.alpha,
                k: c.k,
                m: c.m,
                slope: loglog_slope(&xs, &ys),
                n: pts.iter().map(|p| p.0).collect(),
                median_min_error: ys,
            });
        }
        Summary { cells, slopes }
    }
}

//! Index bookkeeping for symmetric moment tensors.
//!
//! A degree-`2t` moment tensor of a point cloud is fully symmetric, so the
//! `d^t x d^t` flattening only has `C(d + 2t - 1, 2t)` distinct entries. We
//! accumulate one value per multiset of indices and scatter them into the
//! flattened matrix afterwards.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Multisets of `[d]` of a fixed size, in lexicographic order of their
/// sorted index tuples, each linked to its prefix one level down.
#[derive(Debug)]
struct Level {
    sets: Vec<Vec<usize>>,
    parent: Vec<usize>,
    last: Vec<usize>,
}

#[derive(Debug)]
pub struct SymIndex {
    pub d: usize,
    pub t: usize,
    levels: Vec<Level>,
    offsets: Vec<usize>,
    /// `d^t * d^t` table mapping a flattened (row, col) to a degree-`2t` multiset.
    flat_map: Vec<u32>,
    /// `d^t` table mapping a flattened row to its degree-`t` multiset.
    fold_map: Vec<u32>,
    /// Each degree-`2t` multiset as the union of two degree-`t` multisets.
    halves: Vec<(u32, u32)>,
}

fn build_levels(d: usize, max_degree: usize) -> Vec<Level> {
    let mut levels = vec![Level {
        sets: vec![vec![]],
        parent: vec![0],
        last: vec![0],
    }];
    for r in 1..=max_degree {
        let prev = &levels[r - 1];
        let mut lvl = Level {
            sets: vec![],
            parent: vec![],
            last: vec![],
        };
        for (pi, s) in prev.sets.iter().enumerate() {
            let start = s.last().copied().unwrap_or(0);
            for j in start..d {
                let mut ns = s.clone();
                ns.push(j);
                lvl.sets.push(ns);
                lvl.parent.push(pi);
                lvl.last.push(j);
            }
        }
        levels.push(lvl);
    }
    levels
}

/// Multi-index of flattened position `flat` in lexicographic order over `[d]^t`.
pub fn unflatten(flat: usize, d: usize, t: usize) -> Vec<usize> {
    let mut idx = vec![0; t];
    let mut f = flat;
    for slot in (0..t).rev() {
        idx[slot] = f % d;
        f /= d;
    }
    idx
}

impl SymIndex {
    fn build(d: usize, t: usize) -> Self {
        let levels = build_levels(d, 2 * t);
        let mut offsets = Vec::with_capacity(levels.len());
        let mut acc = 0;
        for l in &levels {
            offsets.push(acc);
            acc += l.sets.len();
        }
        let id_of = |lvl: &Level| -> HashMap<Vec<usize>, u32> {
            lvl.sets
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i as u32))
                .collect()
        };
        let top = id_of(&levels[2 * t]);
        let half = id_of(&levels[t]);
        let rows = d.pow(t as u32);
        let row_sets: Vec<Vec<usize>> = (0..rows)
            .map(|r| {
                let mut s = unflatten(r, d, t);
                s.sort_unstable();
                s
            })
            .collect();
        let fold_map = row_sets.iter().map(|s| half[s]).collect();
        let mut flat_map = Vec::with_capacity(rows * rows);
        let mut merged = Vec::with_capacity(2 * t);
        for a in &row_sets {
            for b in &row_sets {
                merged.clear();
                merged.extend_from_slice(a);
                merged.extend_from_slice(b);
                merged.sort_unstable();
                flat_map.push(top[&merged]);
            }
        }
        let halves = levels[2 * t]
            .sets
            .iter()
            .map(|s| (half[&s[..t]], half[&s[t..]]))
            .collect();
        SymIndex {
            d,
            t,
            levels,
            offsets,
            flat_map,
            fold_map,
            halves,
        }
    }

    /// Shared, lazily built table for `(d, t)`.
    pub fn get(d: usize, t: usize) -> Arc<SymIndex> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<SymIndex>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry((d, t))
            .or_insert_with(|| Arc::new(SymIndex::build(d, t)))
            .clone()
    }

    pub fn rows(&self) -> usize {
        self.fold_map.len()
    }

    pub fn count(&self, degree: usize) -> usize {
        self.levels[degree].sets.len()
    }

    /// Total length of the buffer filled by [`SymIndex::monomials`].
    pub fn monomial_len(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.levels.last().map_or(0, |l| l.sets.len())
    }

    pub fn offset(&self, degree: usize) -> usize {
        self.offsets[degree]
    }

    /// Fills `buf` with every monomial of `z` of degree `0..=2t`, level by level.
    pub fn monomials(&self, z: &[f64], buf: &mut [f64]) {
        self.monomials_to(z, buf, self.levels.len() - 1);
    }

    /// As [`SymIndex::monomials`], stopping after degree `max_degree`.
    pub fn monomials_to(&self, z: &[f64], buf: &mut [f64], max_degree: usize) {
        buf[0] = 1.0;
        for r in 1..=max_degree.min(self.levels.len() - 1) {
            let lvl = &self.levels[r];
            let (lo, hi) = buf.split_at_mut(self.offsets[r]);
            let prev = &lo[self.offsets[r - 1]..];
            for (j, out) in hi[..lvl.sets.len()].iter_mut().enumerate() {
                *out = prev[lvl.parent[j]] * z[lvl.last[j]];
            }
        }
    }

    pub fn halves(&self) -> &[(u32, u32)] {
        &self.halves
    }

    pub fn flat_map(&self) -> &[u32] {
        &self.flat_map
    }

    pub fn fold_map(&self) -> &[u32] {
        &self.fold_map
    }
}

/// `v^{(x)t}` flattened in lexicographic order.
pub fn tensor_power(v: &[f64], t: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..t {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for a in &out {
            for b in v {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

/// `d^t`, or an overflow error when it exceeds `cap`.
pub fn checked_rows(d: usize, t: usize, cap: usize) -> crate::error::Result<usize> {
    let size = (d as u128).checked_pow(t as u32).unwrap_or(u128::MAX);
    if size > cap as u128 {
        return Err(crate::error::Error::DimensionOverflow { size, cap });
    }
    Ok(size as usize)
}

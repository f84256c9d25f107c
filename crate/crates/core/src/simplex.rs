//! Dense bounded-variable primal simplex for
//!
//! ```text
//! maximize c^T x  subject to  A x <= 0,  0 <= x <= u
//! ```
//!
//! `x = 0` is feasible, so no phase one is needed. Bland's rule keeps the
//! method from cycling on the (highly degenerate) zero right-hand side.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic(usize),
    Lower,
    Upper,
}

/// `a` holds the constraint rows, each of length `c.len()`. Returns the maximizer.
pub(crate) fn maximize(a: &[Vec<f64>], c: &[f64], upper: &[f64], max_pivots: usize) -> Vec<f64> {
    let p = c.len();
    let r = a.len();
    let nv = p + r;
    let ub = |j: usize| if j < p { upper[j] } else { f64::INFINITY };

    let mut tab: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut t = row.clone();
            t.resize(nv, 0.0);
            t[p + i] = 1.0;
            t
        })
        .collect();
    let mut obj: Vec<f64> = c.to_vec();
    obj.resize(nv, 0.0);
    let mut basis: Vec<usize> = (p..nv).collect();
    let mut xb = vec![0.0; r];
    let mut status = vec![Status::Lower; nv];
    for (i, &b) in basis.iter().enumerate() {
        status[b] = Status::Basic(i);
    }

    let mut pivots = 0;
    while pivots < max_pivots {
        // Bland: lowest-index improving nonbasic variable.
        let entering = (0..nv).find(|&j| match status[j] {
            Status::Lower => obj[j] > EPS && ub(j) > 0.0,
            Status::Upper => obj[j] < -EPS,
            Status::Basic(_) => false,
        });
        let Some(j) = entering else { break };
        let dir = if status[j] == Status::Lower { 1.0 } else { -1.0 };

        // Basic variables move by -dir * theta * tab[i][j].
        let mut best: Option<(f64, usize, bool)> = None;
        for i in 0..r {
            let delta = -dir * tab[i][j];
            let b = basis[i];
            let limit = if delta < -EPS {
                Some(((xb[i] / -delta).max(0.0), false))
            } else if delta > EPS && ub(b).is_finite() {
                Some((((ub(b) - xb[i]) / delta).max(0.0), true))
            } else {
                None
            };
            if let Some((lim, to_upper)) = limit {
                let better = match best {
                    None => true,
                    Some((bl, bi, _)) => lim < bl - EPS || (lim <= bl + EPS && b < basis[bi]),
                };
                if better {
                    best = Some((lim, i, to_upper));
                }
            }
        }
        let (theta, leave) = match best {
            Some((lim, i, to_upper)) if lim < ub(j) => (lim, Some((i, to_upper))),
            _ => (ub(j), None),
        };
        if !theta.is_finite() {
            // Cannot happen with bounded structural variables; bail out safely.
            break;
        }
        for i in 0..r {
            xb[i] -= dir * theta * tab[i][j];
        }
        match leave {
            None => {
                status[j] = if dir > 0.0 { Status::Upper } else { Status::Lower };
            }
            Some((li, to_upper)) => {
                let old = basis[li];
                status[old] = if to_upper { Status::Upper } else { Status::Lower };
                let entering_value = if dir > 0.0 { theta } else { ub(j) - theta };
                let piv = tab[li][j];
                for v in tab[li].iter_mut() {
                    *v /= piv;
                }
                let prow = tab[li].clone();
                for (i, row) in tab.iter_mut().enumerate() {
                    if i == li {
                        continue;
                    }
                    let f = row[j];
                    if f != 0.0 {
                        for (x, y) in row.iter_mut().zip(&prow) {
                            *x -= f * y;
                        }
                    }
                }
                let f = obj[j];
                for (x, y) in obj.iter_mut().zip(&prow) {
                    *x -= f * y;
                }
                basis[li] = j;
                xb[li] = entering_value;
                status[j] = Status::Basic(li);
            }
        }
        pivots += 1;
    }

    let mut x = vec![0.0; p];
    for (jj, xv) in x.iter_mut().enumerate() {
        *xv = match status[jj] {
            Status::Lower => 0.0,
            Status::Upper => upper[jj],
            Status::Basic(i) => xb[i].clamp(0.0, upper[jj]),
        };
    }
    x
}

//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library code under test except for data
//! constructors.

#![allow(dead_code)]

use icp_core::{Dataset, Label, SparseVector};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

/// `(#{a in scores : a >= alpha} + 1) / (|scores| + 1)` by direct counting.
pub fn brute_p_value(class_scores: &[f64], alpha: f64) -> f64 {
    let mut at_least = 0usize;
    for &a in class_scores {
        if a >= alpha {
            at_least += 1;
        }
    }
    (at_least + 1) as f64 / (class_scores.len() + 1) as f64
}

pub fn dense(x: &SparseVector, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (i, v) in x.iter() {
        out[i as usize] = v;
    }
    out
}

pub fn dense_tanimoto(a: &[f64], b: &[f64]) -> f64 {
    let mut min = 0.0;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for (x, y) in a.iter().zip(b) {
        min += x.min(*y);
        sa += x;
        sb += y;
    }
    let denom = sa + sb - min;
    if denom == 0.0 {
        0.0
    } else {
        min / denom
    }
}

pub fn dense_rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn dense_tanimoto_rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d = dense_tanimoto(a, a) + dense_tanimoto(b, b) - 2.0 * dense_tanimoto(a, b);
    (-d.abs() / gamma).exp()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Random sparse count vector with up to `max_nnz` entries in `[0, dim)`.
pub fn random_sparse<R: Rng>(rng: &mut R, dim: usize, max_nnz: usize, max_count: u32) -> SparseVector {
    let nnz = rng.random_range(1..=max_nnz);
    let mut pairs = std::collections::BTreeMap::new();
    for _ in 0..nnz {
        pairs.insert(rng.random_range(0..dim as u32), rng.random_range(1..=max_count) as f64);
    }
    SparseVector::from_pairs(pairs).unwrap()
}

pub struct QpOptimum {
    pub objective: f64,
    pub alpha: Vec<f64>,
}

pub fn qp_objective(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Exact minimum of the soft-margin SVM dual
///
/// ```text
/// min 1/2 a'Qa - sum a   s.t.  y'a = 0,  0 <= a_i <= upper_i
/// ```
///
/// with `Q_ij = y_i y_j K_ij`, by enumerating every assignment of each
/// coordinate to {lower bound, upper bound, free}. For each assignment the
/// equality-constrained stationarity system on the free coordinates is
/// solved directly; feasible solutions are candidates and the smallest
/// objective among them is the optimum. Requires positive definite `K`.
/// Cost is `3^n` small solves, so `n` should stay at or below about 10.
pub fn brute_force_qp(k: &DMatrix<f64>, y: &[f64], upper: &[f64]) -> QpOptimum {
    let n = y.len();
    assert!(n <= 12, "enumeration oracle is exponential in n");
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[(i, j)]);
    let mut best: Option<QpOptimum> = None;
    let total = 3usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..total {
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        // 0 = at zero, 1 = at upper bound, 2 = free
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = (0..n).map(|i| if state[i] == 1 { upper[i] } else { 0.0 }).collect();
        let fixed_balance: f64 = (0..n).filter(|&i| state[i] != 2).map(|i| y[i] * alpha[i]).sum();
        if free.is_empty() {
            if fixed_balance.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut b = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = q[(i, j)];
                }
                a[(r, m)] = y[i];
                a[(m, r)] = y[i];
                let fixed_part: f64 = (0..n).filter(|&j| state[j] == 1).map(|j| q[(i, j)] * alpha[j]).sum();
                b[r] = 1.0 - fixed_part;
            }
            b[m] = -fixed_balance;
            let Some(sol) = a.lu().solve(&b) else { continue };
            let feasible = free
                .iter()
                .enumerate()
                .all(|(r, &i)| sol[r] >= -1e-12 && sol[r] <= upper[i] + 1e-12);
            if !feasible {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r].clamp(0.0, upper[i]);
            }
        }
        let objective = qp_objective(k, y, &alpha);
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(QpOptimum { objective, alpha });
        }
    }
    best.expect("the all-zero assignment is always feasible")
}

/// Dataset from `(label, dense row)` pairs.
pub fn dataset(rows: &[(Label, &[f64])]) -> Dataset {
    let dim = rows.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
    let vectors = rows
        .iter()
        .map(|(_, r)| {
            SparseVector::from_pairs(r.iter().enumerate().map(|(i, &v)| (i as u32, v))).unwrap()
        })
        .collect();
    Dataset::new(vectors, rows.iter().map(|(l, _)| *l).collect(), dim).unwrap()
}

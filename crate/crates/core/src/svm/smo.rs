//! Pairwise (SMO-type) solver for the box-constrained SVM dual
//!
//! ```text
//! min  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C_i,  y'a = 0,   Q_ij = y_i y_j K_ij
//! ```
//!
//! Working pairs are chosen deterministically: `i` is the maximal KKT
//! violator, `j` maximizes the second-order decrease among violating
//! partners; ties go to the lowest index. No shrinking, so the iterate
//! sequence depends only on the input order.

use crate::kernel::GramMatrix;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub alpha: Vec<f64>,
    /// Decision offset: `d(x) = sum a_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub struct Problem<'a> {
    pub gram: &'a GramMatrix,
    /// +1.0 / -1.0 per example.
    pub y: &'a [f64],
    /// Per-example upper bound (C times the class weight).
    pub upper: &'a [f64],
    pub tolerance: f64,
    pub max_iterations: usize,
}

struct State<'a> {
    p: &'a Problem<'a>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl State<'_> {
    #[inline]
    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.p.upper[t]
    }

    #[inline]
    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    #[inline]
    fn in_up(&self, t: usize) -> bool {
        if self.p.y[t] > 0.0 {
            !self.at_upper(t)
        } else {
            !self.at_lower(t)
        }
    }

    #[inline]
    fn in_low(&self, t: usize) -> bool {
        if self.p.y[t] > 0.0 {
            !self.at_lower(t)
        } else {
            !self.at_upper(t)
        }
    }

    /// Returns the working pair, or `None` once the maximal violation is
    /// below tolerance.
    fn select_pair(&self) -> Option<(usize, usize)> {
        let n = self.alpha.len();
        let y = self.p.y;
        let k = self.p.gram;

        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if self.in_up(t) {
                let v = -y[t] * self.grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let i = i_sel?;

        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        let kii = k.get(i, i);
        let row_i = k.row(i);
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let yg = y[t] * self.grad[t];
            if yg > gmax2 {
                gmax2 = yg;
            }
            let b = gmax + yg;
            if b > 0.0 {
                let mut a = kii + k.get(t, t) - 2.0 * row_i[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let gain = -(b * b) / a;
                if gain < best {
                    best = gain;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < self.p.tolerance {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn update_pair(&mut self, i: usize, j: usize) {
        let y = self.p.y;
        let k = self.p.gram;
        let (ci, cj) = (self.p.upper[i], self.p.upper[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let kij = k.get(i, j);
        let (gi, gj) = (self.grad[i], self.grad[j]);
        let (mut ai, mut aj) = (old_i, old_j);

        if y[i] != y[j] {
            let mut quad = k.get(i, i) + k.get(j, j) + 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let mut quad = k.get(i, i) + k.get(j, j) - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }

        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let di = (ai - old_i) * y[i];
        let dj = (aj - old_j) * y[j];
        let (row_i, row_j) = (k.row(i), k.row(j));
        for t in 0..self.grad.len() {
            self.grad[t] += y[t] * (row_i[t] * di + row_j[t] * dj);
        }
    }

    fn rho(&self) -> f64 {
        let y = self.p.y;
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..self.alpha.len() {
            let yg = y[t] * self.grad[t];
            if self.at_upper(t) {
                if y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(t) {
                if y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }

    fn objective(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>()
            / 2.0
    }
}

pub fn solve(p: &Problem<'_>) -> SolveResult {
    let n = p.y.len();
    assert_eq!(p.gram.rows(), n);
    assert_eq!(p.gram.cols(), n);
    assert_eq!(p.upper.len(), n);

    let mut state = State {
        p,
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < p.max_iterations {
        match state.select_pair() {
            None => {
                converged = true;
                break;
            }
            Some((i, j)) => state.update_pair(i, j),
        }
        iterations += 1;
    }
    if !converged && state.select_pair().is_none() {
        converged = true;
    }
    SolveResult {
        rho: state.rho(),
        objective: state.objective(),
        alpha: state.alpha,
        iterations,
        converged,
    }
}

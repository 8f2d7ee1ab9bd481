//! Box-constrained convex quadratic programs.
//!
//! Projected Newton iteration on `0.5 x'Qx + c'x` subject to `lo <= x <= hi`
//! with an epsilon-active set, for symmetric positive (semi)definite band
//! matrices. Dense least-squares problems are reduced to the normal
//! equations and solved with the same routine.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 10_000;
pub const STATIONARITY_TOL: f64 = 1e-8;

/// Symmetric band matrix; stores the diagonal and `bandwidth` sub-diagonals.
#[derive(Debug, Clone)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    // data[i * (bw + 1) + k] = Q[i][i - k]
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self { n, bw: bandwidth, data: vec![0.0; n * (bandwidth + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[i * (self.bw + 1) + (i - j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "({i}, {j}) outside band");
        self.data[i * (self.bw + 1) + (i - j)] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            y[i] += row[0] * x[i];
            for k in 1..=self.bw.min(i) {
                y[i] += row[k] * x[i - k];
                y[i - k] += row[k] * x[i];
            }
        }
        y
    }

    fn from_dense(q: &DMatrix<f64>) -> Self {
        let n = q.nrows();
        let mut bw = 0;
        for i in 0..n {
            for j in 0..i {
                if q[(i, j)] != 0.0 {
                    bw = bw.max(i - j);
                }
            }
        }
        let mut b = Self::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                b.data[i * (bw + 1) + (i - j)] = q[(i, j)];
            }
        }
        b
    }
}

/// Banded Cholesky of the principal submatrix on `free` (sorted indices).
fn solve_reduced(q: &BandedSym, free: &[usize], rhs: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let nf = free.len();
    let bw = q.bw;
    let w = bw + 1;
    // l[a * w + k] = L[a][a - k]
    let mut l = vec![0.0; nf * w];
    for a in 0..nf {
        for k in (0..=bw.min(a)).rev() {
            let b = a - k;
            let mut s = q.get(free[a], free[b]);
            if k == 0 {
                s += ridge;
            }
            for p in 1..=bw.min(b) {
                // sum over c < b of L[a][c] L[b][c]; c = b - p, a - c = k + p
                if k + p > bw {
                    break;
                }
                s -= l[a * w + k + p] * l[b * w + p];
            }
            if k == 0 {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[a * w] = s.sqrt();
            } else {
                l[a * w + k] = s / l[b * w];
            }
        }
    }
    let mut y = rhs.to_vec();
    for a in 0..nf {
        let mut s = y[a];
        for k in 1..=bw.min(a) {
            s -= l[a * w + k] * y[a - k];
        }
        y[a] = s / l[a * w];
    }
    for a in (0..nf).rev() {
        let mut s = y[a];
        for k in 1..=bw.min(nf - 1 - a) {
            s -= l[(a + k) * w + k] * y[a + k];
        }
        y[a] = s / l[a * w];
    }
    Some(y)
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Infinity norm of `x - P(x - grad)`.
    pub projected_gradient: f64,
}

fn project(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

fn objective(q: &BandedSym, c: &[f64], x: &[f64]) -> f64 {
    let qx = q.mul_vec(x);
    x.iter().zip(&qx).zip(c).map(|((xi, qi), ci)| 0.5 * xi * qi + ci * xi).sum()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| (xi - project(xi - gi, l, h)).abs())
        .fold(0.0, f64::max)
}

/// Minimises `0.5 x'Qx + c'x` over the box `[lo, hi]` starting from `start`.
pub fn solve_bound_constrained_qp(
    q: &BandedSym,
    c: &[f64],
    lo: &[f64],
    hi: &[f64],
    start: &[f64],
) -> Result<QpSolution> {
    let n = q.dim();
    if c.len() != n || lo.len() != n || hi.len() != n || start.len() != n {
        return Err(Error::InvalidInput("QP dimensions disagree".into()));
    }
    if let Some(i) = (0..n).find(|&i| !(lo[i] <= hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
        return Err(Error::InvalidInput(format!(
            "infeasible or non-finite bounds at {i}: [{}, {}]",
            lo[i], hi[i]
        )));
    }
    let mut x: Vec<f64> = (0..n).map(|i| project(start[i], lo[i], hi[i])).collect();
    let diag_scale = (0..n).map(|i| q.get(i, i).abs()).fold(0.0, f64::max).max(1e-300);
    let mut f = objective(q, c, &x);

    for it in 0..MAX_ITERATIONS {
        let g: Vec<f64> = q.mul_vec(&x).iter().zip(c).map(|(a, b)| a + b).collect();
        let pg = projected_gradient_norm(&x, &g, lo, hi);
        if pg <= STATIONARITY_TOL {
            return Ok(QpSolution { x, iterations: it, projected_gradient: pg });
        }
        let eps = pg.min(1e-3);
        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] + eps && g[i] > 0.0) || (x[i] >= hi[i] - eps && g[i] < 0.0))
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let mut d = vec![0.0; n];
        for i in 0..n {
            if active[i] {
                d[i] = -g[i] / q.get(i, i).max(1e-12 * diag_scale);
            }
        }
        if !free.is_empty() {
            let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            let mut ridge = 0.0;
            let step = loop {
                if let Some(s) = solve_reduced(q, &free, &rhs, ridge) {
                    break s;
                }
                ridge = if ridge == 0.0 { 1e-12 * diag_scale } else { ridge * 100.0 };
                if ridge > diag_scale {
                    return Err(Error::NonConvergence { what: "reduced Newton system", iterations: it });
                }
            };
            for (k, &i) in free.iter().enumerate() {
                d[i] = step[k];
            }
        }

        // Armijo search along the projection arc
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..n).map(|i| project(x[i] + alpha * d[i], lo[i], hi[i])).collect();
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            let ft = objective(q, c, &trial);
            if ft <= f + 1e-4 * decrease || (ft <= f && decrease.abs() < 1e-300) {
                accepted = trial != x;
                x = trial;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // fall back to a scaled projected gradient step
            let step = 1.0 / (0..n).map(|i| {
                (0..n).filter(|&j| i.abs_diff(j) <= q.bw).map(|j| q.get(i, j).abs()).sum::<f64>()
            }).fold(1e-300, f64::max);
            let trial: Vec<f64> = (0..n).map(|i| project(x[i] - step * g[i], lo[i], hi[i])).collect();
            let ft = objective(q, c, &trial);
            if ft > f || trial == x {
                return Err(Error::NonConvergence { what: "projected Newton (stalled)", iterations: it });
            }
            x = trial;
            f = ft;
        }
    }
    Err(Error::NonConvergence { what: "bound-constrained QP", iterations: MAX_ITERATIONS })
}

/// Minimises `||design x - target||^2` subject to `lo <= x <= hi`.
pub fn solve_bound_constrained_ls(
    design: &DMatrix<f64>,
    target: &[f64],
    lo: &[f64],
    hi: &[f64],
    start: &[f64],
) -> Result<Vec<f64>> {
    if design.nrows() != target.len() || design.ncols() != lo.len() {
        return Err(Error::InvalidInput("least-squares dimensions disagree".into()));
    }
    if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] <= hi[i])) {
        return Err(Error::InvalidInput(format!("infeasible bounds at {i}: lo > hi")));
    }
    if (0..lo.len()).any(|i| !(lo[i] <= start[i] && start[i] <= hi[i])) {
        return Err(Error::InvalidInput("start point outside bounds".into()));
    }
    let at = design.transpose();
    let q = &at * design;
    let b = nalgebra::DVector::from_column_slice(target);
    let c: Vec<f64> = (&at * b).iter().map(|v| -v).collect();
    let sol = solve_bound_constrained_qp(&BandedSym::from_dense(&q), &c, lo, hi, start)?;
    Ok(sol.x)
}

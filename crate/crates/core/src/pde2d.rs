//! Heston American put on sinh-stretched `(S, v)` grids: split operator
//! assembly, Modified Craig-Sneyd stepping with explicit projection, and
//! boundary extraction with natural-spline interpolation in variance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    build_sinh_stock_grid, build_sinh_variance_grid, fd_first_coeffs, fd_mixed_coeffs, fd_second_coeffs, Grid1D,
    Scheme,
};
use crate::heston::HestonParams;
use crate::linalg::{fit_natural_spline, BandedLu, BandedMatrix, SplineCurve, TridiagonalFactor, TridiagonalMatrix};
use crate::pde1d::EXERCISE_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonGridConfig {
    pub m1: usize,
    pub m2: usize,
    pub s_max: f64,
    pub v_max: f64,
    /// Stock-grid concentration `c = K * c_ratio`.
    pub c_ratio: f64,
    /// Variance-grid concentration `d = v_max / d_divisor`.
    pub d_divisor: f64,
}

impl Default for HestonGridConfig {
    fn default() -> Self {
        Self { m1: 500, m2: 110, s_max: 80.0, v_max: 4.5, c_ratio: 0.2, d_divisor: 80.0 }
    }
}

#[derive(Debug, Clone)]
pub struct HestonGrids {
    pub s: Grid1D,
    pub v: Grid1D,
}

impl HestonGridConfig {
    pub fn build(&self, strike: f64) -> Result<HestonGrids> {
        let s = build_sinh_stock_grid(strike, self.s_max, strike * self.c_ratio, self.m1)?;
        let v = build_sinh_variance_grid(self.v_max, self.v_max / self.d_divisor, self.m2)?;
        Ok(HestonGrids { s, v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCSConfig {
    pub lambda2: f64,
    pub m3: usize,
}

impl Default for MCSConfig {
    fn default() -> Self {
        Self { lambda2: 0.4, m3: 300 }
    }
}

impl MCSConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda2 > 0.0 && self.lambda2 <= 1.0) || self.m3 == 0 {
            return Err(Error::InvalidInput(format!("MCS needs lambda2 in (0, 1] and m3 >= 1, got {self:?}")));
        }
        Ok(())
    }
}

/// `A = A0 + A1 + A2` on interior nodes `(s_i, v_j)`, `1 <= i < m1`,
/// `0 <= j < m2`, ordered S-major within each variance level.
#[derive(Debug, Clone)]
pub struct SplitOperator {
    pub ns: usize,
    pub nv: usize,
    /// Mixed term: 3x3 weights per row over offsets (-1, 0, 1)^2.
    pub a0: Vec<[[f64; 3]; 3]>,
    /// S-direction: (lower, diag, upper) per row.
    pub a1: Vec<[f64; 3]>,
    /// v-direction: weights per row over offsets -2..=2.
    pub a2: Vec<[f64; 5]>,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl SplitOperator {
    pub fn dim(&self) -> usize {
        self.ns * self.nv
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ns + i
    }

    pub fn apply_a0(&self, x: &[f64], out: &mut [f64]) {
        let (ns, nv) = (self.ns, self.nv);
        for j in 0..nv {
            for i in 0..ns {
                let w = &self.a0[self.idx(i, j)];
                let mut acc = 0.0;
                for (a, row) in w.iter().enumerate() {
                    for (b, &wt) in row.iter().enumerate() {
                        if wt != 0.0 {
                            let (ii, jj) = (i + a, j + b);
                            // weights outside the interior are zero by construction
                            acc += wt * x[(jj - 1) * ns + ii - 1];
                        }
                    }
                }
                out[self.idx(i, j)] = acc;
            }
        }
    }

    pub fn apply_a1(&self, x: &[f64], out: &mut [f64]) {
        let ns = self.ns;
        for (r, w) in self.a1.iter().enumerate() {
            let i = r % ns;
            let mut acc = w[1] * x[r];
            if i > 0 {
                acc += w[0] * x[r - 1];
            }
            if i + 1 < ns {
                acc += w[2] * x[r + 1];
            }
            out[r] = acc;
        }
    }

    pub fn apply_a2(&self, x: &[f64], out: &mut [f64]) {
        let ns = self.ns;
        for (r, w) in self.a2.iter().enumerate() {
            let mut acc = 0.0;
            for (k, &wt) in w.iter().enumerate() {
                if wt != 0.0 {
                    acc += wt * x[r + k * ns - 2 * ns];
                }
            }
            out[r] = acc;
        }
    }

    /// `A x` (no boundary vector).
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut t = vec![0.0; x.len()];
        self.apply_a0(x, out);
        self.apply_a1(x, &mut t);
        for (o, v) in out.iter_mut().zip(&t) {
            *o += v;
        }
        self.apply_a2(x, &mut t);
        for (o, v) in out.iter_mut().zip(&t) {
            *o += v;
        }
    }

    pub fn boundary(&self) -> Vec<f64> {
        self.b0.iter().zip(&self.b1).zip(&self.b2).map(|((a, b), c)| a + b + c).collect()
    }
}

/// Builds the split operator with Dirichlet data `V = K` at `S = 0`,
/// `V = 0` at `s_max` and `V = K` at `v_max` (the `s_max` value wins at
/// the shared corner).
pub fn assemble_heston_operator(grid_s: &Grid1D, grid_v: &Grid1D, p: &HestonParams, strike: f64) -> Result<SplitOperator> {
    let m1 = grid_s.last();
    let m2 = grid_v.last();
    if !(grid_v.node(m2) > 1.0) {
        return Err(Error::InvalidInput("variance grid must extend beyond v = 1".into()));
    }
    if m1 < 3 || m2 < 3 {
        return Err(Error::InvalidInput("Heston grids need at least 3 intervals per axis".into()));
    }
    let (ns, nv) = (m1 - 1, m2);
    let n = ns * nv;
    let mut op = SplitOperator {
        ns,
        nv,
        a0: vec![[[0.0; 3]; 3]; n],
        a1: vec![[0.0; 3]; n],
        a2: vec![[0.0; 5]; n],
        b0: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
    };
    // Dirichlet value at a grid node outside the unknown set
    let edge = |i: usize, j: usize| -> f64 {
        if i == m1 {
            0.0
        } else if i == 0 || j == m2 {
            strike
        } else {
            unreachable!()
        }
    };
    let is_interior = |i: usize, j: usize| i >= 1 && i < m1 && j < m2;
    let half_r = 0.5 * p.r;
    for j in 0..m2 {
        let v = grid_v.node(j);
        for i in 1..m1 {
            let s = grid_s.node(i);
            let row = (j * ns) + i - 1;

            let d1 = fd_first_coeffs(grid_s, i, Scheme::Central)?;
            let d2 = fd_second_coeffs(grid_s, i, Scheme::Central)?;
            let mut w = [0.0; 3];
            for k in 0..3 {
                w[k] = p.r * s * d1.weights[k] + 0.5 * v * s * s * d2.weights[k];
            }
            w[1] -= half_r;
            for (k, &wt) in w.iter().enumerate() {
                let ii = i + k - 1;
                if is_interior(ii, j) {
                    op.a1[row][k] = wt;
                } else {
                    op.b1[row] += wt * edge(ii, j);
                }
            }

            let scheme = if j == 0 {
                Scheme::Upward
            } else if v <= 1.0 || j < 2 {
                Scheme::Central
            } else {
                Scheme::Downward
            };
            let f1 = fd_first_coeffs(grid_v, j, scheme)?;
            let mut wv = [0.0; 5];
            for k in 0..3 {
                wv[(f1.offsets[k] + 2) as usize] += p.kappa * (p.theta - v) * f1.weights[k];
            }
            if j > 0 {
                let f2 = fd_second_coeffs(grid_v, j, Scheme::Central)?;
                for k in 0..3 {
                    wv[(f2.offsets[k] + 2) as usize] += 0.5 * p.sigma_v * p.sigma_v * v * f2.weights[k];
                }
            }
            wv[2] -= half_r;
            for (k, &wt) in wv.iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                let jj = j + k - 2;
                if is_interior(i, jj) {
                    op.a2[row][k] = wt;
                } else {
                    op.b2[row] += wt * edge(i, jj);
                }
            }

            if j > 0 {
                let mx = fd_mixed_coeffs(grid_s, grid_v, i, j, Scheme::Central)?;
                let coef = p.rho * p.sigma_v * v * s;
                for a in 0..3 {
                    for b in 0..3 {
                        let wt = coef * mx.weights[a][b];
                        let (ii, jj) = (i + a - 1, j + b - 1);
                        if is_interior(ii, jj) {
                            op.a0[row][a][b] = wt;
                        } else {
                            op.b0[row] += wt * edge(ii, jj);
                        }
                    }
                }
            }
        }
    }
    Ok(op)
}

/// Factorisations of `I - lambda dt A1` and `I - lambda dt A2`.
pub struct McsFactors {
    s_dir: Vec<TridiagonalFactor>,
    v_dir: Vec<BandedLu>,
    pub theta_dt: f64,
    pub dt: f64,
    pub lambda2: f64,
}

impl McsFactors {
    pub fn new(op: &SplitOperator, dt: f64, lambda2: f64) -> Result<Self> {
        let th = lambda2 * dt;
        let (ns, nv) = (op.ns, op.nv);
        let mut s_dir = Vec::with_capacity(nv);
        for j in 0..nv {
            let rows = &op.a1[j * ns..(j + 1) * ns];
            let lower = rows[1..].iter().map(|w| -th * w[0]).collect();
            let diag = rows.iter().map(|w| 1.0 - th * w[1]).collect();
            let upper = rows[..ns - 1].iter().map(|w| -th * w[2]).collect();
            s_dir.push(TridiagonalMatrix::new(lower, diag, upper)?.factor()?);
        }
        let mut v_dir = Vec::with_capacity(ns);
        for i in 0..ns {
            let mut m = BandedMatrix::identity(nv, 2, 2);
            for j in 0..nv {
                let w = &op.a2[j * ns + i];
                for (k, &wt) in w.iter().enumerate() {
                    if wt != 0.0 {
                        let jj = j + k - 2;
                        m.add(j, jj, -th * wt);
                    }
                }
            }
            v_dir.push(m.factor()?);
        }
        Ok(Self { s_dir, v_dir, theta_dt: th, dt, lambda2 })
    }

    fn solve_s(&self, ns: usize, x: &mut [f64]) {
        for (j, f) in self.s_dir.iter().enumerate() {
            f.solve_in_place(&mut x[j * ns..(j + 1) * ns]);
        }
    }

    fn solve_v(&self, ns: usize, x: &mut [f64]) {
        let nv = x.len() / ns;
        let mut col = vec![0.0; nv];
        for (i, f) in self.v_dir.iter().enumerate() {
            for j in 0..nv {
                col[j] = x[j * ns + i];
            }
            f.solve_in_place(&mut col);
            for j in 0..nv {
                x[j * ns + i] = col[j];
            }
        }
    }
}

/// One MCS step with constant boundary data, without projection.
pub fn mcs_time_step(state: &[f64], op: &SplitOperator, f: &McsFactors) -> Vec<f64> {
    let n = state.len();
    let (dt, th, lam) = (f.dt, f.theta_dt, f.lambda2);
    let ns = op.ns;
    let b = op.boundary();
    let mut av = vec![0.0; n];
    op.apply(state, &mut av);
    let mut a1v = vec![0.0; n];
    op.apply_a1(state, &mut a1v);
    let mut a2v = vec![0.0; n];
    op.apply_a2(state, &mut a2v);

    let y0: Vec<f64> = (0..n).map(|k| state[k] + dt * (av[k] + b[k])).collect();
    let mut y1: Vec<f64> = (0..n).map(|k| y0[k] - th * a1v[k]).collect();
    f.solve_s(ns, &mut y1);
    let mut y2: Vec<f64> = (0..n).map(|k| y1[k] - th * a2v[k]).collect();
    f.solve_v(ns, &mut y2);

    let diff: Vec<f64> = (0..n).map(|k| y2[k] - state[k]).collect();
    let mut a0d = vec![0.0; n];
    op.apply_a0(&diff, &mut a0d);
    let mut ad = vec![0.0; n];
    op.apply(&diff, &mut ad);
    let mut z1: Vec<f64> =
        (0..n).map(|k| y0[k] + lam * dt * a0d[k] + (0.5 - lam) * dt * ad[k] - th * a1v[k]).collect();
    f.solve_s(ns, &mut z1);
    for k in 0..n {
        z1[k] -= th * a2v[k];
    }
    f.solve_v(ns, &mut z1);
    z1
}

/// Exercise boundary on the solver lattice, calendar time ascending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExerciseBoundary2D {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    /// `boundary[n][j]` at `(t[n], v[j])`.
    pub boundary: Vec<Vec<f64>>,
    pub strike: f64,
    #[serde(skip)]
    splines: Vec<Option<SplineCurve>>,
}

pub const V_CLAMP: f64 = 2.0;

impl ExerciseBoundary2D {
    pub fn new(t: Vec<f64>, v: Vec<f64>, boundary: Vec<Vec<f64>>, strike: f64) -> Result<Self> {
        if boundary.len() != t.len() || boundary.iter().any(|row| row.len() != v.len()) {
            return Err(Error::GridMismatch("boundary matrix does not match its grids".into()));
        }
        let splines = boundary
            .iter()
            .map(|row| if v.len() >= 2 { fit_natural_spline(&v, row).map(Some) } else { Ok(None) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { t, v, boundary, strike, splines })
    }

    pub fn zero(t: Vec<f64>, strike: f64) -> Self {
        let v = vec![0.0, V_CLAMP];
        let boundary = vec![vec![0.0; 2]; t.len()];
        Self::new(t, v, boundary, strike).expect("consistent shapes")
    }

    pub fn time_index(&self, t: f64) -> usize {
        self.t.partition_point(|&tn| tn <= t + 1e-12).saturating_sub(1)
    }

    /// Spline value in `v` at time node `n`, `v` clamped to `[0, 2]` and the
    /// result to `[0, K]`.
    pub fn eval_at_step(&self, n: usize, v: f64) -> f64 {
        let vq = v.clamp(0.0, V_CLAMP);
        let raw = match &self.splines[n] {
            Some(sp) => sp.eval(vq),
            None => self.boundary[n][0],
        };
        raw.clamp(0.0, self.strike)
    }

    /// Refined curve on `v = 0, 0.01, ..., 2` at time node `n`.
    pub fn refined(&self, n: usize) -> Vec<(f64, f64)> {
        (0..=200).map(|k| k as f64 * 0.01).map(|v| (v, self.eval_at_step(n, v))).collect()
    }

    pub fn write_csv(&self, path: &Path, refined: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "v", "boundary_price"])?;
        for (n, &t) in self.t.iter().enumerate() {
            let rows: Vec<(f64, f64)> = if refined {
                self.refined(n)
            } else {
                self.v.iter().copied().zip(self.boundary[n].iter().copied()).collect()
            };
            for (v, b) in rows {
                w.write_record([format!("{t}"), format!("{v}"), format!("{b}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn boundary_eval_2d(b: &ExerciseBoundary2D, t: f64, v: f64) -> f64 {
    b.eval_at_step(b.time_index(t), v)
}

/// Value surface at `t = 0` on interior nodes, `values[j * ns + i - 1]`.
#[derive(Debug, Clone)]
pub struct HestonSolution {
    pub grids: HestonGrids,
    pub values: Vec<f64>,
    pub strike: f64,
}

fn quad_weights(nodes: &[f64], x: f64, lo: usize, hi: usize) -> (usize, [f64; 3]) {
    let k = nodes.partition_point(|&z| z < x).clamp(lo + 1, hi - 1) - 1;
    let (a, b, c) = (nodes[k], nodes[k + 1], nodes[k + 2]);
    (
        k,
        [
            (x - b) * (x - c) / ((a - b) * (a - c)),
            (x - a) * (x - c) / ((b - a) * (b - c)),
            (x - a) * (x - b) / ((c - a) * (c - b)),
        ],
    )
}

impl HestonSolution {
    fn node_value(&self, i: usize, j: usize) -> f64 {
        let (m1, m2) = (self.grids.s.last(), self.grids.v.last());
        if i == m1 {
            0.0
        } else if i == 0 || j == m2 {
            self.strike
        } else {
            self.values[j * (m1 - 1) + i - 1]
        }
    }

    /// Quadratic Lagrange interpolation in both directions.
    pub fn value_at(&self, s: f64, v: f64) -> f64 {
        let (ks, ws) = quad_weights(self.grids.s.nodes(), s, 1, self.grids.s.last() - 1);
        let (kv, wv) = quad_weights(self.grids.v.nodes(), v, 0, self.grids.v.last() - 1);
        let mut acc = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                acc += ws[a] * wv[b] * self.node_value(ks + a, kv + b);
            }
        }
        acc
    }
}

fn extract_level(op: &SplitOperator, grid_s: &Grid1D, state: &[f64], strike: f64, j: usize) -> f64 {
    let eps = EXERCISE_TOL * strike;
    let row = &state[j * op.ns..(j + 1) * op.ns];
    (0..op.ns)
        .rev()
        .find(|&k| {
            let s = grid_s.node(k + 1);
            let payoff = strike - s;
            payoff > 0.0 && row[k] <= payoff + eps
        })
        .map_or(0.0, |k| grid_s.node(k + 1))
}

fn run_heston(
    p: &HestonParams,
    gcfg: &HestonGridConfig,
    cfg: &MCSConfig,
    strike: f64,
    maturity: f64,
    american: bool,
) -> Result<(HestonSolution, ExerciseBoundary2D)> {
    p.validate()?;
    cfg.validate()?;
    if !(strike > 0.0 && strike < gcfg.s_max) || !(maturity > 0.0) {
        return Err(Error::InvalidInput("need 0 < K < s_max and T > 0".into()));
    }
    let grids = gcfg.build(strike)?;
    let op = assemble_heston_operator(&grids.s, &grids.v, p, strike)?;
    let dt = maturity / cfg.m3 as f64;
    let factors = McsFactors::new(&op, dt, cfg.lambda2)?;
    let payoff: Vec<f64> = (0..op.dim()).map(|k| (strike - grids.s.node(k % op.ns + 1)).max(0.0)).collect();
    let mut state = payoff.clone();
    // boundary rows indexed by time-to-maturity step, reversed at the end
    let mut rows = Vec::with_capacity(cfg.m3 + 1);
    let level_row = |state: &[f64]| -> Vec<f64> {
        (0..op.nv).map(|j| extract_level(&op, &grids.s, state, strike, j)).collect()
    };
    rows.push(level_row(&state));
    for _ in 0..cfg.m3 {
        state = mcs_time_step(&state, &op, &factors);
        if american {
            for (u, q) in state.iter_mut().zip(&payoff) {
                *u = u.max(*q);
            }
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonConvergence { what: "MCS stepping produced non-finite values", iterations: rows.len() });
        }
        rows.push(level_row(&state));
    }
    rows.reverse();
    let t = (0..=cfg.m3).map(|n| n as f64 * dt).collect();
    let v = grids.v.nodes()[..op.nv].to_vec();
    let boundary = ExerciseBoundary2D::new(t, v, rows, strike)?;
    Ok((HestonSolution { grids, values: state, strike }, boundary))
}

pub fn price_american_put_heston(
    p: &HestonParams,
    gcfg: &HestonGridConfig,
    cfg: &MCSConfig,
    strike: f64,
    maturity: f64,
) -> Result<(HestonSolution, ExerciseBoundary2D)> {
    run_heston(p, gcfg, cfg, strike, maturity, true)
}

/// Same stepping without the projection.
pub fn price_european_put_heston(
    p: &HestonParams,
    gcfg: &HestonGridConfig,
    cfg: &MCSConfig,
    strike: f64,
    maturity: f64,
) -> Result<HestonSolution> {
    run_heston(p, gcfg, cfg, strike, maturity, false).map(|(s, _)| s)
}

//! One-factor finite-difference engine on a uniform log-price grid:
//! Brennan-Schwartz projection for American puts, plain stepping for
//! European calls and puts, and exercise-boundary extraction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_uniform_grid, Grid1D};
use crate::heston::OptionKind;
use crate::linalg::{TridiagonalFactor, TridiagonalMatrix};

pub const SIGMA_MIN: f64 = 0.01;
pub const SIGMA_MAX: f64 = 6.0;

/// Local volatility `sigma(t, S)`.
pub trait LocalVolFn: Sync {
    fn sigma(&self, t: f64, s: f64) -> f64;

    /// Local variance at `t` on log-price nodes; surface-backed
    /// implementations override this with a direct grid lookup.
    fn variance_row(&self, t: f64, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            let s = self.sigma(t, xi.exp());
            *o = s * s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVol(pub f64);

impl LocalVolFn for ConstantVol {
    fn sigma(&self, _t: f64, _s: f64) -> f64 {
        self.0
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync> LocalVolFn for F {
    fn sigma(&self, t: f64, s: f64) -> f64 {
        self(t, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solver1DConfig {
    /// Time steps.
    pub n1: usize,
    /// Space steps; the grid has `n2 + 1` nodes.
    pub n2: usize,
    pub x0: f64,
    pub x_n2: f64,
    /// Weight of the explicit part; 0.5 is Crank-Nicolson-like.
    pub lambda1: f64,
    /// Fully implicit steps taken first from the payoff to damp the
    /// oscillations the kink excites under `lambda1 = 0.5`.
    #[serde(default = "default_smoothing")]
    pub smoothing_steps: usize,
}

fn default_smoothing() -> usize {
    2
}

impl Default for Solver1DConfig {
    /// 300 x 1001 grid on `[x0, log 80]` with `log 10` on node 500.
    fn default() -> Self {
        let x_n2 = 80f64.ln();
        let dx = 8f64.ln() / 501.0;
        Self { n1: 300, n2: 1001, x0: 10f64.ln() - 500.0 * dx, x_n2, lambda1: 0.5, smoothing_steps: default_smoothing() }
    }
}

impl Solver1DConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 < 2 {
            return Err(Error::InvalidInput("1D solver needs n1 >= 1 and n2 >= 2".into()));
        }
        if !(self.x0 < self.x_n2) {
            return Err(Error::InvalidInput("1D solver needs x0 < x_n2".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(Error::InvalidInput(format!("lambda1 = {} outside [0, 1]", self.lambda1)));
        }
        Ok(())
    }

    pub fn space_grid(&self) -> Result<Grid1D> {
        build_uniform_grid(self.x0, self.x_n2, self.n2)
    }

    pub fn time_grid(&self, maturity: f64) -> Result<Grid1D> {
        build_uniform_grid(0.0, maturity, self.n1)
    }
}

/// Values on the `(t_j, x_i)` lattice, `values[j][i]`.
#[derive(Debug, Clone)]
pub struct ValueGrid1D {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ValueGrid1D {
    /// Linear interpolation in log-price at time node `j`.
    pub fn value_at(&self, j: usize, s: f64) -> f64 {
        let row = &self.values[j];
        let x = s.ln();
        let n = self.x.len();
        if x <= self.x[0] {
            return row[0];
        }
        if x >= self.x[n - 1] {
            return row[n - 1];
        }
        let dx = (self.x[n - 1] - self.x[0]) / (n - 1) as f64;
        let i = (((x - self.x[0]) / dx) as usize).min(n - 2);
        let w = (x - self.x[i]) / (self.x[i + 1] - self.x[i]);
        (1.0 - w) * row[i] + w * row[i + 1]
    }
}

/// Critical stock price per solver time node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseBoundary1D {
    pub t: Vec<f64>,
    pub boundary: Vec<f64>,
    pub strike: f64,
}

impl ExerciseBoundary1D {
    pub fn constant(t: Vec<f64>, level: f64, strike: f64) -> Self {
        let boundary = vec![level; t.len()];
        Self { t, boundary, strike }
    }

    /// Left-continuous piecewise-constant lookup: the last node `t_j <= t`.
    pub fn eval(&self, t: f64) -> f64 {
        let j = self.t.partition_point(|&tj| tj <= t + 1e-12);
        self.boundary[j.saturating_sub(1)]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "boundary_price"])?;
        for (t, b) in self.t.iter().zip(&self.boundary) {
            w.write_record([format!("{t}"), format!("{b}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Early-exercise detection tolerance relative to the strike.
pub const EXERCISE_TOL: f64 = 1e-9;

/// Largest node per time step whose value sits on a positive payoff;
/// zero when no node exercises.
pub fn extract_boundary_1d(values: &ValueGrid1D, strike: f64) -> ExerciseBoundary1D {
    let eps = EXERCISE_TOL * strike;
    let boundary = values
        .values
        .iter()
        .map(|row| {
            row.iter()
                .zip(&values.x)
                .rev()
                .find(|(&u, &x)| {
                    let payoff = strike - x.exp();
                    payoff > 0.0 && u <= payoff + eps
                })
                .map_or(0.0, |(_, &x)| x.exp())
        })
        .collect();
    ExerciseBoundary1D { t: values.t.clone(), boundary, strike }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Contract {
    EuropeanCall,
    EuropeanPut,
    AmericanPut,
}

fn check_vol(t: f64, x: &[f64], var: &[f64]) -> Result<()> {
    let (lo, hi) = (SIGMA_MIN * SIGMA_MIN * (1.0 - 1e-12), SIGMA_MAX * SIGMA_MAX * (1.0 + 1e-12));
    for (i, &v) in var.iter().enumerate() {
        if !(v >= lo && v <= hi) {
            return Err(Error::VolBounds { t, s: x[i].exp(), sigma: v.max(0.0).sqrt() });
        }
    }
    Ok(())
}

fn solve(vol: &dyn LocalVolFn, cfg: &Solver1DConfig, strike: f64, maturity: f64, r: f64, contract: Contract) -> Result<ValueGrid1D> {
    cfg.validate()?;
    if !(strike >= 0.0) || !(maturity > 0.0) || !(r >= 0.0) {
        return Err(Error::InvalidInput("need K >= 0, T > 0, r >= 0".into()));
    }
    if contract == Contract::AmericanPut && !(strike > cfg.x0.exp() && strike < cfg.x_n2.exp()) {
        return Err(Error::InvalidInput(format!("strike {strike} outside the log-price grid")));
    }
    let xg = cfg.space_grid()?;
    let tg = cfg.time_grid(maturity)?;
    let x = xg.nodes().to_vec();
    let t = tg.nodes().to_vec();
    let n = x.len();
    let dx = (cfg.x_n2 - cfg.x0) / cfg.n2 as f64;
    let dt = maturity / cfg.n1 as f64;
    let alpha = dt / (dx * dx);

    let payoff: Vec<f64> = x
        .iter()
        .map(|&xi| match contract {
            Contract::EuropeanCall => (xi.exp() - strike).max(0.0),
            _ => (strike - xi.exp()).max(0.0),
        })
        .collect();
    let edges = |tau: f64| -> (f64, f64) {
        let df = strike * (-r * tau).exp();
        match contract {
            Contract::EuropeanCall => ((x[0].exp() - df).max(0.0), x[n - 1].exp() - df),
            Contract::EuropeanPut => ((df - x[0].exp()).max(0.0), 0.0),
            Contract::AmericanPut => (strike - x[0].exp(), 0.0),
        }
    };

    let mut values = vec![Vec::new(); t.len()];
    values[cfg.n1] = payoff.clone();
    let mut var = vec![0.0; n];
    let m = n - 2;
    let (mut lo, mut di, mut up) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut rhs = vec![0.0; m];
    for j in (0..cfg.n1).rev() {
        vol.variance_row(t[j], &x, &mut var);
        check_vol(t[j], &x, &var)?;
        let next = &values[j + 1];
        let lam = if cfg.n1 - j <= cfg.smoothing_steps { 0.0 } else { cfg.lambda1 };
        let (b0, bn) = edges(maturity - t[j]);
        for k in 0..m {
            let i = k + 1;
            let v = var[i];
            let w = r - 0.5 * v;
            let l = 0.5 * alpha * (v - dx * w);
            let c = -alpha * v;
            let u = 0.5 * alpha * (v + dx * w);
            lo[k] = -(1.0 - lam) * l;
            di[k] = 1.0 + r * dt - (1.0 - lam) * c;
            up[k] = -(1.0 - lam) * u;
            rhs[k] = next[i] + lam * (l * next[i - 1] + c * next[i] + u * next[i + 1]);
            if k == 0 {
                rhs[k] += (1.0 - lam) * l * b0;
            }
            if k == m - 1 {
                rhs[k] += (1.0 - lam) * u * bn;
            }
        }
        let mat = TridiagonalMatrix::new(lo[1..].to_vec(), di.clone(), up[..m - 1].to_vec())?;
        let factor: TridiagonalFactor = mat.factor()?;
        factor.solve_in_place(&mut rhs);
        let mut row = Vec::with_capacity(n);
        row.push(b0);
        row.extend_from_slice(&rhs);
        row.push(bn);
        if contract == Contract::AmericanPut {
            for (u, p) in row.iter_mut().zip(&payoff) {
                *u = u.max(*p);
            }
        }
        values[j] = row;
    }
    Ok(ValueGrid1D { t, x, values })
}

/// American put by backward stepping with projection onto the payoff.
pub fn price_american_put_1d(
    vol: &dyn LocalVolFn,
    cfg: &Solver1DConfig,
    strike: f64,
    maturity: f64,
    r: f64,
) -> Result<(ValueGrid1D, ExerciseBoundary1D)> {
    let values = solve(vol, cfg, strike, maturity, r, Contract::AmericanPut)?;
    let boundary = extract_boundary_1d(&values, strike);
    Ok((values, boundary))
}

pub fn price_european_call_1d(vol: &dyn LocalVolFn, cfg: &Solver1DConfig, strike: f64, maturity: f64, r: f64) -> Result<ValueGrid1D> {
    solve(vol, cfg, strike, maturity, r, Contract::EuropeanCall)
}

pub fn price_european_put_1d(vol: &dyn LocalVolFn, cfg: &Solver1DConfig, strike: f64, maturity: f64, r: f64) -> Result<ValueGrid1D> {
    solve(vol, cfg, strike, maturity, r, Contract::EuropeanPut)
}

pub fn price_european_1d(
    vol: &dyn LocalVolFn,
    cfg: &Solver1DConfig,
    strike: f64,
    maturity: f64,
    r: f64,
    kind: OptionKind,
) -> Result<ValueGrid1D> {
    match kind {
        OptionKind::Call => price_european_call_1d(vol, cfg, strike, maturity, r),
        OptionKind::Put => price_european_put_1d(vol, cfg, strike, maturity, r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_hits_spot_on_node_500() {
        let cfg = Solver1DConfig::default();
        let g = cfg.space_grid().unwrap();
        assert!((g.node(500) - 10f64.ln()).abs() < 1e-13);
        assert!((cfg.x0 - 0.2272941).abs() < 1e-7);
    }

    #[test]
    fn boundary_extraction_by_construction() {
        let x: Vec<f64> = (0..6).map(|i| (6.0 + i as f64).ln()).collect();
        let k = 10.0;
        let above: Vec<f64> = x.iter().map(|xi| (k - xi.exp()).max(0.0) + 0.5).collect();
        let vg = ValueGrid1D { t: vec![0.0], x: x.clone(), values: vec![above] };
        assert_eq!(extract_boundary_1d(&vg, k).boundary, vec![0.0]);
        let mut touch: Vec<f64> = x.iter().map(|xi| (k - xi.exp()).max(0.0)).collect();
        for u in touch.iter_mut().skip(2) {
            *u += 0.3;
        }
        let vg = ValueGrid1D { t: vec![0.0], x, values: vec![touch] };
        assert!((extract_boundary_1d(&vg, k).boundary[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn left_continuous_lookup() {
        let b = ExerciseBoundary1D { t: vec![0.0, 0.5, 1.0], boundary: vec![1.0, 2.0, 3.0], strike: 10.0 };
        assert_eq!(b.eval(0.0), 1.0);
        assert_eq!(b.eval(0.49), 1.0);
        assert_eq!(b.eval(0.5), 2.0);
        assert_eq!(b.eval(1.0), 3.0);
    }

    #[test]
    fn rejects_bad_vol_and_config() {
        let cfg = Solver1DConfig { n1: 10, n2: 100, ..Default::default() };
        assert!(matches!(price_american_put_1d(&ConstantVol(7.0), &cfg, 10.0, 1.0, 0.1), Err(Error::VolBounds { .. })));
        let bad = Solver1DConfig { lambda1: 1.5, ..cfg };
        assert!(price_american_put_1d(&ConstantVol(0.3), &bad, 10.0, 1.0, 0.1).is_err());
    }
}

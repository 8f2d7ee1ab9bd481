use crate::error::{Error, Result};

use super::tridiag::TridiagonalMatrix;

/// Natural cubic spline. Outside the knot range the curve continues
/// linearly with the end slope.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    // second derivatives at the knots; zero at both ends
    m: Vec<f64>,
}

pub fn fit_natural_spline(xs: &[f64], ys: &[f64]) -> Result<SplineCurve> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InvalidInput(format!(
            "spline needs at least two knots with matching values, got {} knots and {} values",
            n,
            ys.len()
        )));
    }
    for w in xs.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidInput(format!(
                "spline knots must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let diag: Vec<f64> = (0..k).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
        let off: Vec<f64> = (0..k.saturating_sub(1)).map(|i| h[i + 1]).collect();
        let rhs: Vec<f64> = (0..k)
            .map(|i| 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]))
            .collect();
        let tri = TridiagonalMatrix::new(off.clone(), diag, off)?;
        let inner = super::tridiag::solve_tridiagonal(&tri, &rhs)?;
        m[1..n - 1].copy_from_slice(&inner);
    }
    Ok(SplineCurve { xs: xs.to_vec(), ys: ys.to_vec(), m })
}

impl SplineCurve {
    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.m
    }

    fn end_slopes(&self) -> (f64, f64) {
        let n = self.xs.len();
        let h0 = self.xs[1] - self.xs[0];
        let left = (self.ys[1] - self.ys[0]) / h0 - h0 * (2.0 * self.m[0] + self.m[1]) / 6.0;
        let hn = self.xs[n - 1] - self.xs[n - 2];
        let right =
            (self.ys[n - 1] - self.ys[n - 2]) / hn + hn * (self.m[n - 2] + 2.0 * self.m[n - 1]) / 6.0;
        (left, right)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.end_slopes().0 * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.end_slopes().1 * (x - self.xs[n - 1]);
        }
        let i = self.xs.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Two-step spline surface over a strike x maturity lattice: a natural
/// spline in strike per maturity, then a natural spline in maturity
/// through the per-maturity evaluations.
#[derive(Debug, Clone)]
pub struct SplineSurface {
    strikes: Vec<f64>,
    maturities: Vec<f64>,
    rows: Vec<SplineCurve>,
}

/// `grid[t][k]` holds the value at `maturities[t]`, `strikes[k]`.
pub fn fit_bicubic_surface(
    strikes: &[f64],
    maturities: &[f64],
    grid: &[Vec<f64>],
) -> Result<SplineSurface> {
    if grid.len() != maturities.len() || grid.iter().any(|r| r.len() != strikes.len()) {
        return Err(Error::InvalidInput(format!(
            "ragged value grid: expected {} rows of {} values",
            maturities.len(),
            strikes.len()
        )));
    }
    if maturities.len() < 2 {
        return Err(Error::InvalidInput("surface needs at least two maturities".into()));
    }
    let rows = grid
        .iter()
        .map(|r| fit_natural_spline(strikes, r))
        .collect::<Result<Vec<_>>>()?;
    // validates maturity ordering
    fit_natural_spline(maturities, &vec![0.0; maturities.len()])?;
    Ok(SplineSurface { strikes: strikes.to_vec(), maturities: maturities.to_vec(), rows })
}

impl SplineSurface {
    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn eval(&self, strike: f64, maturity: f64) -> f64 {
        let col: Vec<f64> = self.rows.iter().map(|r| r.eval(strike)).collect();
        fit_natural_spline(&self.maturities, &col)
            .expect("maturities validated at construction")
            .eval(maturity)
    }

    /// Evaluates the surface at one maturity for many strikes.
    pub fn slice(&self, maturity: f64, strikes: &[f64]) -> Vec<f64> {
        strikes.iter().map(|&k| self.eval(k, maturity)).collect()
    }
}

//! Calibration of the one-factor models to a call quote surface: the
//! Black-Scholes implied volatility of a reference quote, a Dupire local
//! volatility surface from the discretised forward equation, and the
//! path-wise Black-Scholes recalibration against Heston put prices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::heston::{heston_european_put, implied_vol, HestonParams, OptionSpec, QuoteSurface, StateAt};
use crate::linalg::{fit_natural_spline, TridiagonalMatrix};
use crate::pde1d::{price_european_call_1d, LocalVolFn, Solver1DConfig, SIGMA_MAX, SIGMA_MIN};

pub const VAR_MIN: f64 = SIGMA_MIN * SIGMA_MIN;
pub const VAR_MAX: f64 = SIGMA_MAX * SIGMA_MAX;

/// Implied volatility of the quote at `(ref_strike, ref_maturity)`.
pub fn calibrate_black_scholes(quotes: &QuoteSurface, ref_strike: f64, ref_maturity: f64) -> Result<f64> {
    let price = quotes.price(ref_strike, ref_maturity).ok_or_else(|| {
        Error::InvalidInput(format!("no quote at K={ref_strike}, T={ref_maturity}"))
    })?;
    implied_vol(price, quotes.rate, quotes.spot, &OptionSpec::european_call(ref_strike, ref_maturity))
}

/// Black-Scholes volatility matching the Heston put with the same strike and
/// remaining maturity at a path state. Fails when the fitted volatility
/// leaves `[0.01, 6]`.
pub fn recalibrate_bs_on_path(state: StateAt, p: &HestonParams, strike: f64, maturity: f64) -> Result<f64> {
    let spec = OptionSpec::european_put(strike, maturity);
    let price = heston_european_put(p, &spec, state)?;
    let sigma = implied_vol(price, p.r, state.s, &OptionSpec::european_put(strike, maturity - state.t))?;
    // a put priced at its parity bound inverts to the bracket edge
    if !(SIGMA_MIN..=SIGMA_MAX).contains(&sigma) {
        return Err(Error::VolBounds { t: state.t, s: state.s, sigma });
    }
    Ok(sigma)
}

/// Local variance on the `(t_j, x_i)` solver lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalVolSurface {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// `var[j][i] = sigma(t_j, e^{x_i})^2`.
    pub var: Vec<Vec<f64>>,
    /// First time index and the `x` index range of the fitted region.
    pub region_t_start: usize,
    pub region_x: (usize, usize),
}

impl LocalVolSurface {
    pub fn flat(t: Vec<f64>, x: Vec<f64>, sigma: f64) -> Self {
        let var = vec![vec![sigma * sigma; x.len()]; t.len()];
        let n = x.len();
        Self { t, x, var, region_t_start: 0, region_x: (0, n - 1) }
    }

    fn time_slot(&self, t: f64) -> (usize, f64) {
        let n = self.t.len();
        if t <= self.t[0] {
            return (0, 0.0);
        }
        if t >= self.t[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.t.partition_point(|&z| z <= t).clamp(1, n - 1) - 1;
        (k, (t - self.t[k]) / (self.t[k + 1] - self.t[k]))
    }

    fn row_at(&self, row: &[f64], x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return row[0];
        }
        if x >= self.x[n - 1] {
            return row[n - 1];
        }
        let k = self.x.partition_point(|&z| z <= x).clamp(1, n - 1) - 1;
        let w = (x - self.x[k]) / (self.x[k + 1] - self.x[k]);
        (1.0 - w) * row[k] + w * row[k + 1]
    }

    pub fn variance(&self, t: f64, s: f64) -> f64 {
        let (k, w) = self.time_slot(t);
        let x = s.ln();
        let a = self.row_at(&self.var[k], x);
        if w < 1e-12 {
            return a;
        }
        (1.0 - w) * a + w * self.row_at(&self.var[k + 1], x)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "S", "sigma"])?;
        for (j, &t) in self.t.iter().enumerate() {
            for (i, &x) in self.x.iter().enumerate() {
                w.write_record([format!("{t}"), format!("{}", x.exp()), format!("{}", self.var[j][i].sqrt())])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl LocalVolFn for LocalVolSurface {
    fn sigma(&self, t: f64, s: f64) -> f64 {
        self.variance(t, s).sqrt()
    }

    fn variance_row(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (k, w) = self.time_slot(t);
        let same_grid = x.len() == self.x.len() && x.iter().zip(&self.x).all(|(a, b)| (a - b).abs() < 1e-12);
        if same_grid && (w < 1e-9 || w > 1.0 - 1e-9) {
            let row = if w < 0.5 { &self.var[k] } else { &self.var[k + 1] };
            out.copy_from_slice(row);
            return;
        }
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = self.variance(t, xi.exp());
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuoteError {
    pub strike: f64,
    pub maturity: f64,
    pub market: f64,
    pub model: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub quotes: Vec<QuoteError>,
    pub mean_rel_error: f64,
}

impl CalibrationReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DupireConfig {
    pub solver: Solver1DConfig,
    /// Fitted log-price region; the profile is flat outside it.
    pub x_lo: f64,
    pub x_hi: f64,
    /// Fixed-point sweeps per maturity interval.
    pub sweeps: usize,
    /// Stop once every implied-vol mismatch is below this.
    pub tol: f64,
}

impl Default for DupireConfig {
    fn default() -> Self {
        Self { solver: Solver1DConfig::default(), x_lo: 2f64.ln(), x_hi: 20f64.ln(), sweeps: 60, tol: 1e-8 }
    }
}

/// Forward-equation operator for call prices in log-strike:
/// `dC/dT = v/2 (C_yy - C_y) - r C_y`, returned as (lower, diag, upper)
/// of `dt * L` at interior node `i`.
fn forward_coeffs(v: f64, r: f64, dt: f64, dy: f64) -> [f64; 3] {
    let a = dt / (dy * dy);
    let b = dt / (2.0 * dy);
    let diff = 0.5 * v;
    [diff * a + (diff + r) * b, -2.0 * diff * a, diff * a - (diff + r) * b]
}

struct ForwardGrid {
    y: Vec<f64>,
    dy: f64,
    dt: f64,
    r: f64,
    spot: f64,
}

impl ForwardGrid {
    fn edges(&self, t: f64) -> (f64, f64) {
        let n = self.y.len();
        let lo = (self.spot - self.y[0].exp() * (-self.r * t).exp()).max(0.0);
        let hi = (self.spot - self.y[n - 1].exp() * (-self.r * t).exp()).max(0.0);
        (lo, hi)
    }

    /// One theta step of the forward equation from `t` to `t + dt`.
    fn step(&self, c: &[f64], var: &[f64], t: f64, lam: f64) -> Result<Vec<f64>> {
        let n = self.y.len();
        let m = n - 2;
        let (lo_next, hi_next) = self.edges(t + self.dt);
        let mut lower = vec![0.0; m - 1];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m - 1];
        let mut rhs = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            let w = forward_coeffs(var[i], self.r, self.dt, self.dy);
            let explicit = w[0] * c[i - 1] + w[1] * c[i] + w[2] * c[i + 1];
            rhs[k] = c[i] + lam * explicit;
            diag[k] = 1.0 - (1.0 - lam) * w[1];
            if k > 0 {
                lower[k - 1] = -(1.0 - lam) * w[0];
            } else {
                rhs[k] += (1.0 - lam) * w[0] * lo_next;
            }
            if k + 1 < m {
                upper[k] = -(1.0 - lam) * w[2];
            } else {
                rhs[k] += (1.0 - lam) * w[2] * hi_next;
            }
        }
        let mat = TridiagonalMatrix::new(lower, diag, upper)?;
        mat.factor()?.solve_in_place(&mut rhs);
        let mut out = Vec::with_capacity(n);
        out.push(lo_next);
        out.extend(rhs);
        out.push(hi_next);
        Ok(out)
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&z| z <= x).clamp(1, xs.len() - 1) - 1;
    let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
    (1.0 - w) * ys[k] + w * ys[k + 1]
}

/// Strike-only variance profile over `y` from knot values in log-strike,
/// flat beyond the outer knots.
fn profile_from_knots(knots: &[f64], sig: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let sp = fit_natural_spline(knots, sig)?;
    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
    Ok(y.iter().map(|&yi| sp.eval(yi.clamp(lo, hi)).clamp(SIGMA_MIN, SIGMA_MAX).powi(2)).collect())
}

/// Calibrates a local variance surface to the quotes on the solver lattice
/// spanning the longest quoted maturity. Between consecutive maturities the
/// variance is a strike profile through knots at the quoted strikes; each
/// interval is fitted by marching the forward equation and rescaling the
/// knots until the model reproduces the quoted implied volatilities.
pub fn calibrate_dupire(quotes: &QuoteSurface, cfg: &DupireConfig) -> Result<(LocalVolSurface, CalibrationReport)> {
    let scfg = &cfg.solver;
    scfg.validate()?;
    if !(cfg.x_lo < cfg.x_hi) || cfg.sweeps == 0 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidInput("bad Dupire configuration".into()));
    }
    if (scfg.lambda1 - 0.5).abs() > 1e-12 {
        return Err(Error::InvalidInput("Dupire calibration runs with lambda1 = 0.5".into()));
    }
    let strikes = quotes.strikes();
    let maturities = quotes.maturities();
    if maturities.len() < 2 {
        return Err(Error::InvalidInput("Dupire calibration needs at least two maturities".into()));
    }
    quotes.check_arbitrage_bounds()?;

    let t_max = maturities[maturities.len() - 1];
    let tg: Grid1D = scfg.time_grid(t_max)?;
    let xg: Grid1D = scfg.space_grid()?;
    let (t, y) = (tg.nodes().to_vec(), xg.nodes().to_vec());
    let fwd = ForwardGrid {
        y: y.clone(),
        dy: (scfg.x_n2 - scfg.x0) / scfg.n2 as f64,
        dt: t_max / scfg.n1 as f64,
        r: quotes.rate,
        spot: quotes.spot,
    };
    let step_lambda = |j: usize| if j < scfg.smoothing_steps { 0.0 } else { scfg.lambda1 };
    let mut ends = Vec::with_capacity(maturities.len());
    for &m in &maturities {
        let j = (m / fwd.dt).round() as usize;
        if ((j as f64) * fwd.dt - m).abs() > 1e-9 || j == 0 {
            return Err(Error::GridMismatch(format!("maturity {m} is not on the time grid")));
        }
        ends.push(j);
    }
    let i_lo = y.partition_point(|&z| z < cfg.x_lo - 1e-12);
    let i_hi = (y.partition_point(|&z| z <= cfg.x_hi + 1e-12)).max(1) - 1;
    let y_fit: Vec<f64> = y.iter().map(|&z| z.clamp(y[i_lo], y[i_hi])).collect();
    let log_k: Vec<f64> = strikes.iter().map(|k| k.ln()).collect();

    let mut c: Vec<f64> = y.iter().map(|&yi| (quotes.spot - yi.exp()).max(0.0)).collect();
    let mut var: Vec<Vec<f64>> = Vec::with_capacity(scfg.n1 + 1);
    let mut knot_sig: Vec<f64> = Vec::new();
    let mut start = 0;
    for (&mat, &end) in maturities.iter().zip(&ends) {
        let market_iv: Vec<f64> = strikes
            .iter()
            .map(|&k| {
                let price = quotes.price(k, mat).expect("lattice checked");
                implied_vol(price, quotes.rate, quotes.spot, &OptionSpec::european_call(k, mat))
            })
            .collect::<Result<_>>()?;
        if knot_sig.is_empty() {
            knot_sig = market_iv.clone();
        }
        let march = |profile: &[f64]| -> Result<Vec<f64>> {
            let mut cj = c.clone();
            for j in start..end {
                cj = fwd.step(&cj, profile, t[j], step_lambda(j))?;
            }
            Ok(cj)
        };
        let mut profile = profile_from_knots(&log_k, &knot_sig, &y_fit)?;
        let mut worst = f64::INFINITY;
        for _ in 0..cfg.sweeps {
            let cj = march(&profile)?;
            worst = 0.0;
            for (k, &strike) in strikes.iter().enumerate() {
                let model = interp_linear(&y, &cj, strike.ln());
                let iv = implied_vol(model, quotes.rate, quotes.spot, &OptionSpec::european_call(strike, mat))?;
                // total variance gap over the interval, spread on the local variance
                let gap = (market_iv[k] * market_iv[k] - iv * iv) * mat / (mat - t[start]);
                worst = worst.max((market_iv[k] - iv).abs());
                knot_sig[k] = (knot_sig[k] * knot_sig[k] + gap).clamp(VAR_MIN, VAR_MAX).sqrt();
            }
            profile = profile_from_knots(&log_k, &knot_sig, &y_fit)?;
            if worst < cfg.tol {
                break;
            }
        }
        // knots pinned at a bound cannot close the gap; anything else is a failure
        if worst > 1e-4 {
            return Err(Error::NonConvergence { what: "Dupire knot fixed point", iterations: cfg.sweeps });
        }
        c = march(&profile)?;
        for _ in start..end {
            var.push(profile.clone());
        }
        start = end;
    }
    while var.len() < scfg.n1 + 1 {
        let last = var[var.len() - 1].clone();
        var.push(last);
    }
    let lv = LocalVolSurface { t, x: y, var, region_t_start: 0, region_x: (i_lo, i_hi) };
    let report = reprice(quotes, &lv, scfg)?;
    Ok((lv, report))
}

/// Prices every quote with the backward solver under `vol`.
pub fn reprice(quotes: &QuoteSurface, vol: &dyn LocalVolFn, scfg: &Solver1DConfig) -> Result<CalibrationReport> {
    let t_max = quotes.maturities().last().copied().unwrap_or(1.0);
    let mut out = Vec::with_capacity(quotes.quotes.len());
    for q in &quotes.quotes {
        let steps = ((scfg.n1 as f64) * q.maturity / t_max).round().max(1.0) as usize;
        let cfg = Solver1DConfig { n1: steps, ..*scfg };
        let grid = price_european_call_1d(vol, &cfg, q.strike, q.maturity, quotes.rate)?;
        let model = grid.value_at(0, quotes.spot);
        out.push(QuoteError {
            strike: q.strike,
            maturity: q.maturity,
            market: q.price,
            model,
            rel_error: ((model - q.price) / q.price).abs(),
        });
    }
    let mean = out.iter().map(|e| e.rel_error).sum::<f64>() / out.len() as f64;
    Ok(CalibrationReport { quotes: out, mean_rel_error: mean })
}

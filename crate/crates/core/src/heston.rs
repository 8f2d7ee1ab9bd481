//! Benchmark model analytics: Heston parameters and semi-analytic European
//! prices, the Black-Scholes closed form, implied volatility and quote
//! surfaces.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma_v: f64,
    pub rho: f64,
    pub r: f64,
    pub s0: f64,
    pub v0: f64,
}

impl HestonParams {
    /// Base case: kappa 5, theta 0.16, vol-of-vol 0.9, rho -0.5, r 0.1,
    /// S(0) 10, v(0) 0.25^2.
    pub fn base_case() -> Self {
        Self { kappa: 5.0, theta: 0.16, sigma_v: 0.9, rho: -0.5, r: 0.1, s0: 10.0, v0: 0.0625 }
    }

    pub fn with_rho(self, rho: f64) -> Self {
        Self { rho, ..self }
    }

    pub fn feller_holds(&self) -> bool {
        2.0 * self.kappa * self.theta > self.sigma_v * self.sigma_v
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("heston parameters: {m}")));
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.theta > 0.0) {
            return bad("theta must be positive");
        }
        if !(self.sigma_v > 0.0) {
            return bad("sigma_v must be positive");
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad("rho must lie in (-1, 1)");
        }
        if !(self.r >= 0.0) {
            return bad("r must be non-negative");
        }
        if !(self.s0 > 0.0) || !(self.v0 > 0.0) {
            return bad("s0 and v0 must be positive");
        }
        if !self.feller_holds() {
            return bad("Feller condition 2 kappa theta > sigma_v^2 violated");
        }
        Ok(())
    }

    /// Characteristic function of `log(S_T / S_t) - r tau` given `v_t = v`.
    pub fn char_fn(&self, z: Complex64, tau: f64, v: f64) -> Complex64 {
        let i = Complex64::i();
        let s2 = self.sigma_v * self.sigma_v;
        let xi = self.kappa - self.sigma_v * self.rho * i * z;
        let d = (xi * xi + s2 * (z * z + i * z)).sqrt();
        let g = (xi - d) / (xi + d);
        let e = (-d * tau).exp();
        let dd = (xi - d) / s2 * (1.0 - e) / (1.0 - g * e);
        let cc = self.kappa * self.theta / s2 * ((xi - d) * tau - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln());
        (cc + dd * v).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExerciseStyle {
    European,
    American,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
    pub kind: OptionKind,
    pub style: ExerciseStyle,
}

impl OptionSpec {
    pub fn european_call(strike: f64, maturity: f64) -> Self {
        Self { strike, maturity, kind: OptionKind::Call, style: ExerciseStyle::European }
    }

    pub fn european_put(strike: f64, maturity: f64) -> Self {
        Self { strike, maturity, kind: OptionKind::Put, style: ExerciseStyle::European }
    }

    pub fn american_put(strike: f64, maturity: f64) -> Self {
        Self { strike, maturity, kind: OptionKind::Put, style: ExerciseStyle::American }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0) || !(self.maturity > 0.0) {
            return Err(Error::InvalidInput(format!(
                "option needs positive strike and maturity, got K={}, T={}",
                self.strike, self.maturity
            )));
        }
        Ok(())
    }
}

/// Time and state at which a price is requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateAt {
    pub t: f64,
    pub s: f64,
    pub v: f64,
}

const CF_TOL: f64 = 1e-8;

fn check_european(spec: &OptionSpec, at: &StateAt) -> Result<f64> {
    if spec.style != ExerciseStyle::European {
        return Err(Error::InvalidInput("semi-analytic pricing is for European options".into()));
    }
    if !(spec.maturity > 0.0) || !(spec.strike >= 0.0) {
        return Err(Error::InvalidInput("strike must be >= 0 and maturity > 0".into()));
    }
    let tau = spec.maturity - at.t;
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("pricing time {} not before maturity {}", at.t, spec.maturity)));
    }
    if !(at.s > 0.0) || !(at.v >= 0.0) {
        return Err(Error::InvalidInput("state needs S > 0 and v >= 0".into()));
    }
    Ok(tau)
}

/// European call under Heston via a single Fourier integral along the
/// shifted contour `Im(z) = -1/2`.
pub fn heston_european_call(p: &HestonParams, spec: &OptionSpec, at: StateAt) -> Result<f64> {
    let tau = check_european(spec, &at)?;
    let (s, k) = (at.s, spec.strike);
    if k == 0.0 {
        return Ok(s);
    }
    let x = (s / k).ln() + p.r * tau;
    let shift = Complex64::new(0.0, -0.5);
    let integrand = |u: f64| {
        let z = Complex64::new(u, 0.0) + shift;
        let phase = Complex64::new(0.0, u * x).exp();
        (phase * p.char_fn(z, tau, at.v)).re / (u * u + 0.25)
    };
    let integral = quad::integrate_half_line(integrand, CF_TOL)?;
    let price = s - (s * k).sqrt() * (-0.5 * p.r * tau).exp() / PI * integral;
    if !price.is_finite() {
        return Err(Error::Quadrature("non-finite Heston price".into()));
    }
    Ok(price)
}

pub fn heston_european_put(p: &HestonParams, spec: &OptionSpec, at: StateAt) -> Result<f64> {
    let tau = check_european(spec, &at)?;
    let call = heston_european_call(p, &OptionSpec { kind: OptionKind::Call, ..*spec }, at)?;
    Ok(call - at.s + spec.strike * (-p.r * tau).exp())
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Black-Scholes value with `spec.maturity` as time to expiry.
pub fn bs_price(sigma: f64, r: f64, s: f64, spec: &OptionSpec) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("volatility must be positive, got {sigma}")));
    }
    spec.validate()?;
    Ok(bs_unchecked(sigma, r, s, spec.strike, spec.maturity, spec.kind))
}

fn bs_unchecked(sigma: f64, r: f64, s: f64, k: f64, tau: f64, kind: OptionKind) -> f64 {
    let sd = sigma * tau.sqrt();
    let df = (-r * tau).exp();
    let d1 = ((s / k).ln() + r * tau) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    match kind {
        OptionKind::Call => s * norm_cdf(d1) - k * df * norm_cdf(d2),
        OptionKind::Put => k * df * norm_cdf(-d2) - s * norm_cdf(-d1),
    }
}

fn bs_vega(sigma: f64, r: f64, s: f64, k: f64, tau: f64) -> f64 {
    let sd = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + r * tau) / sd + 0.5 * sd;
    s * norm_pdf(d1) * tau.sqrt()
}

pub const IV_LOWER: f64 = 1e-6;
pub const IV_UPPER: f64 = 6.0;
const IV_TOL: f64 = 1e-10;
const IV_MAX_ITER: usize = 200;

/// Black-Scholes implied volatility by Newton iteration safeguarded with
/// bisection on `[1e-6, 6]`.
pub fn implied_vol(price: f64, r: f64, s: f64, spec: &OptionSpec) -> Result<f64> {
    spec.validate()?;
    let (k, tau) = (spec.strike, spec.maturity);
    let df = (-r * tau).exp();
    let (lower, upper) = match spec.kind {
        OptionKind::Call => ((s - k * df).max(0.0), s),
        OptionKind::Put => ((k * df - s).max(0.0), k * df),
    };
    if !(price > lower && price < upper) {
        return Err(Error::PriceOutOfBounds { price, lower, upper });
    }
    let f = |sig: f64| bs_unchecked(sig, r, s, k, tau, spec.kind) - price;
    let (mut a, mut b) = (IV_LOWER, IV_UPPER);
    let (fa, fb) = (f(a), f(b));
    if fa > 0.0 || fb < 0.0 {
        let (lower, upper) = (fa + price, fb + price);
        return Err(Error::PriceOutOfBounds { price, lower, upper });
    }
    if fa.abs() <= IV_TOL {
        return Ok(a);
    }
    if fb.abs() <= IV_TOL {
        return Ok(b);
    }
    let mut x = (2.0 * ((s / k).ln() + r * tau).abs() / tau).sqrt().clamp(0.05, 1.0);
    for _ in 0..IV_MAX_ITER {
        let fx = f(x);
        if fx.abs() <= IV_TOL {
            return Ok(x);
        }
        if fx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let vega = bs_vega(x, r, s, k, tau);
        let newton = x - fx / vega;
        x = if vega > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if b - a < 1e-16 * b {
            break;
        }
    }
    let fx = f(x);
    if fx.abs() <= IV_TOL {
        return Ok(x);
    }
    Err(Error::NonConvergence { what: "implied volatility", iterations: IV_MAX_ITER })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub strike: f64,
    pub maturity: f64,
    pub price: f64,
}

/// European call quotes on a strike x maturity lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteSurface {
    pub quotes: Vec<Quote>,
    pub model: String,
    pub spot: f64,
    pub rate: f64,
}

/// Strikes 7, 7.25, ..., 13 and maturities 0.25, 0.5, 0.75, 1.
pub fn standard_lattice() -> (Vec<f64>, Vec<f64>) {
    let strikes = (0..25).map(|i| 7.0 + 0.25 * i as f64).collect();
    let maturities = vec![0.25, 0.5, 0.75, 1.0];
    (strikes, maturities)
}

impl QuoteSurface {
    pub fn from_heston(p: &HestonParams, strikes: &[f64], maturities: &[f64]) -> Result<Self> {
        p.validate()?;
        let mut quotes = Vec::with_capacity(strikes.len() * maturities.len());
        for &t in maturities {
            for &k in strikes {
                let spec = OptionSpec::european_call(k, t);
                let price = heston_european_call(p, &spec, StateAt { t: 0.0, s: p.s0, v: p.v0 })?;
                quotes.push(Quote { strike: k, maturity: t, price });
            }
        }
        Ok(Self { quotes, model: "heston".into(), spot: p.s0, rate: p.r })
    }

    pub fn from_black_scholes(sigma: f64, r: f64, s0: f64, strikes: &[f64], maturities: &[f64]) -> Result<Self> {
        let mut quotes = Vec::new();
        for &t in maturities {
            for &k in strikes {
                let price = bs_price(sigma, r, s0, &OptionSpec::european_call(k, t))?;
                quotes.push(Quote { strike: k, maturity: t, price });
            }
        }
        Ok(Self { quotes, model: format!("black-scholes({sigma})"), spot: s0, rate: r })
    }

    fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup();
        v
    }

    pub fn strikes(&self) -> Vec<f64> {
        Self::sorted_unique(self.quotes.iter().map(|q| q.strike).collect())
    }

    pub fn maturities(&self) -> Vec<f64> {
        Self::sorted_unique(self.quotes.iter().map(|q| q.maturity).collect())
    }

    pub fn price(&self, strike: f64, maturity: f64) -> Option<f64> {
        self.quotes
            .iter()
            .find(|q| (q.strike - strike).abs() < 1e-12 && (q.maturity - maturity).abs() < 1e-12)
            .map(|q| q.price)
    }

    /// `grid[t][k]` layout over `maturities()` x `strikes()`.
    pub fn price_grid(&self) -> Result<Vec<Vec<f64>>> {
        let ks = self.strikes();
        self.maturities()
            .iter()
            .map(|&t| {
                ks.iter()
                    .map(|&k| {
                        self.price(k, t).ok_or_else(|| {
                            Error::InvalidInput(format!("quote lattice incomplete at K={k}, T={t}"))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Checks `(S - K e^{-rT})+ <= C <= S` and monotonicity in strike.
    pub fn check_arbitrage_bounds(&self) -> Result<()> {
        for q in &self.quotes {
            let lower = (self.spot - q.strike * (-self.rate * q.maturity).exp()).max(0.0);
            if q.price < lower - 1e-9 || q.price > self.spot + 1e-9 {
                return Err(Error::PriceOutOfBounds { price: q.price, lower, upper: self.spot });
            }
        }
        for t in self.maturities() {
            let mut row: Vec<&Quote> = self.quotes.iter().filter(|q| q.maturity == t).collect();
            row.sort_by(|a, b| a.strike.total_cmp(&b.strike));
            if row.windows(2).any(|w| w[1].price > w[0].price + 1e-12) {
                return Err(Error::InvalidInput(format!("call prices increase in strike at T={t}")));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for q in &self.quotes {
            w.serialize(q)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, spot: f64, rate: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let quotes = r.deserialize().collect::<std::result::Result<Vec<Quote>, _>>()?;
        Ok(Self { quotes, model: "csv".into(), spot, rate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at0(p: &HestonParams) -> StateAt {
        StateAt { t: 0.0, s: p.s0, v: p.v0 }
    }

    #[test]
    fn base_case_atm_price() {
        // reference from a two-probability (Gil-Pelaez) evaluation
        let p = HestonParams::base_case();
        let spec = OptionSpec::european_call(10.0, 1.0);
        let c = heston_european_call(&p, &spec, at0(&p)).unwrap();
        assert!((c - 1.9236980138).abs() < 1e-8, "c = {c}");
        let iv = implied_vol(c, p.r, p.s0, &spec).unwrap();
        assert!((iv - 0.3699703591).abs() < 1e-8, "iv = {iv}");
    }

    #[test]
    fn degenerate_heston_is_black_scholes() {
        let p = HestonParams { kappa: 2.0, theta: 0.09, sigma_v: 1e-4, rho: 0.0, r: 0.05, s0: 10.0, v0: 0.09 };
        for k in [8.0, 10.0, 12.5] {
            let spec = OptionSpec::european_call(k, 0.75);
            let h = heston_european_call(&p, &spec, at0(&p)).unwrap();
            let b = bs_price(0.3, 0.05, 10.0, &spec).unwrap();
            assert!((h - b).abs() < 1e-4, "K={k}: {h} vs {b}");
        }
    }

    #[test]
    fn zero_and_tiny_strike_limits() {
        let p = HestonParams::base_case();
        let c0 = heston_european_call(&p, &OptionSpec { strike: 0.0, ..OptionSpec::european_call(1.0, 1.0) }, at0(&p)).unwrap();
        assert_eq!(c0, 10.0);
        let c = heston_european_call(&p, &OptionSpec::european_call(1e-6, 1.0), at0(&p)).unwrap();
        assert!((c - 10.0).abs() < 1e-5);
    }

    #[test]
    fn put_call_parity_and_deep_itm_put() {
        let p = HestonParams::base_case();
        for (k, t) in [(7.0, 0.25), (10.0, 1.0), (13.0, 0.5)] {
            let c = heston_european_call(&p, &OptionSpec::european_call(k, t), at0(&p)).unwrap();
            let put = heston_european_put(&p, &OptionSpec::european_put(k, t), at0(&p)).unwrap();
            assert!((put - (c - 10.0 + k * (-0.1 * t).exp())).abs() < 1e-10);
        }
        let deep = heston_european_put(&p, &OptionSpec::european_put(60.0, 0.5), at0(&p)).unwrap();
        assert!((deep - (60.0 * (-0.05f64).exp() - 10.0)).abs() < 1e-4);
    }

    #[test]
    fn put_and_call_implied_vols_agree() {
        let p = HestonParams::base_case();
        let c = heston_european_call(&p, &OptionSpec::european_call(10.0, 1.0), at0(&p)).unwrap();
        let put = heston_european_put(&p, &OptionSpec::european_put(10.0, 1.0), at0(&p)).unwrap();
        let ivc = implied_vol(c, 0.1, 10.0, &OptionSpec::european_call(10.0, 1.0)).unwrap();
        let ivp = implied_vol(put, 0.1, 10.0, &OptionSpec::european_put(10.0, 1.0)).unwrap();
        assert!((ivc - ivp).abs() < 1e-6);
    }

    #[test]
    fn black_scholes_limits_and_parity() {
        let spec = OptionSpec::european_call(9.0, 1.0);
        let tiny = bs_price(1e-9, 0.1, 10.0, &spec).unwrap();
        assert!((tiny - (10.0 - 9.0 * (-0.1f64).exp())).abs() < 1e-12);
        let c = bs_price(0.3, 0.1, 10.0, &spec).unwrap();
        let p = bs_price(0.3, 0.1, 10.0, &OptionSpec::european_put(9.0, 1.0)).unwrap();
        assert!((c - p - (10.0 - 9.0 * (-0.1f64).exp())).abs() < 1e-12);
        assert!(bs_price(0.0, 0.1, 10.0, &spec).is_err());
    }

    #[test]
    fn implied_vol_round_trip_and_domain() {
        for sigma in [0.05, 0.25, 0.7, 1.3, 2.0] {
            for k in [9.5, 10.0, 10.5, 11.0] {
                let spec = OptionSpec::european_call(k, 0.5);
                let price = bs_price(sigma, 0.1, 10.0, &spec).unwrap();
                let iv = implied_vol(price, 0.1, 10.0, &spec).unwrap();
                assert!((iv - sigma).abs() < 1e-8, "sigma {sigma} K {k}: {iv}");
            }
        }
        let spec = OptionSpec::european_call(10.0, 1.0);
        assert!(matches!(implied_vol(10.5, 0.1, 10.0, &spec), Err(Error::PriceOutOfBounds { .. })));
        assert!(matches!(implied_vol(0.5, 0.1, 10.0, &spec), Err(Error::PriceOutOfBounds { .. })));
    }

    #[test]
    fn feller_enforced() {
        let p = HestonParams { sigma_v: 2.0, ..HestonParams::base_case() };
        assert!(p.validate().is_err());
        assert!(HestonParams::base_case().validate().is_ok());
    }
}

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use modelrisk::heston::*;

/// Two-probability call price with the rotation-free characteristic
/// function, integrated by composite Simpson on [0, 300].
fn gil_pelaez_call(p: &HestonParams, k: f64, t: f64) -> f64 {
    let i = Complex64::i();
    let x = p.s0.ln();
    let prob = |j: u8| -> f64 {
        let (u, b) = if j == 1 { (0.5, p.kappa - p.rho * p.sigma_v) } else { (-0.5, p.kappa) };
        let a = p.kappa * p.theta;
        let sv2 = p.sigma_v * p.sigma_v;
        let f = |phi: f64| -> f64 {
            let ip = i * phi;
            let d = ((p.rho * p.sigma_v * ip - b).powi(2) - sv2 * (2.0 * u * ip - phi * phi)).sqrt();
            let g = (b - p.rho * p.sigma_v * ip - d) / (b - p.rho * p.sigma_v * ip + d);
            let e = (-d * t).exp();
            let c = p.r * ip * t + a / sv2 * ((b - p.rho * p.sigma_v * ip - d) * t - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln());
            let dd = (b - p.rho * p.sigma_v * ip - d) / sv2 * ((1.0 - e) / (1.0 - g * e));
            let cf = (c + dd * p.v0 + ip * x).exp();
            ((-ip * k.ln()).exp() * cf / ip).re
        };
        let n = 30_000;
        let (lo, hi) = (1e-8, 300.0);
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for m in 1..n {
            s += f(lo + m as f64 * h) * if m % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + s * h / 3.0 / std::f64::consts::PI
    };
    p.s0 * prob(1) - k * (-p.r * t).exp() * prob(2)
}

fn at0(p: &HestonParams) -> StateAt {
    StateAt { t: 0.0, s: p.s0, v: p.v0 }
}

#[test]
fn fourier_price_matches_two_probability_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p = HestonParams::base_case().with_rho(rng.random_range(-0.8..0.8));
        let k = rng.random_range(6.0..14.0);
        let t = rng.random_range(0.1..2.0);
        let ours = heston_european_call(&p, &OptionSpec::european_call(k, t), at0(&p)).unwrap();
        let oracle = gil_pelaez_call(&p, k, t);
        assert!((ours - oracle).abs() < 1e-7, "K={k} T={t} rho={}: {ours} vs {oracle}", p.rho);
    }
}

#[test]
fn exact_implied_vols_by_correlation() {
    let iv = |rho: f64| {
        let p = HestonParams::base_case().with_rho(rho);
        let spec = OptionSpec::european_call(10.0, 1.0);
        implied_vol(gil_pelaez_call(&p, 10.0, 1.0), p.r, p.s0, &spec).unwrap()
    };
    assert!((iv(-0.5) - 0.3699704).abs() < 1e-6);
    assert!((iv(0.0) - 0.36856).abs() < 1e-5);
    assert!((iv(0.5) - 0.36448).abs() < 1e-5);
}

/// Euler log-price and full-truncation Euler variance, 400 steps a year.
fn mc_calls(p: &HestonParams, specs: &[(f64, f64)], n_paths: usize) -> Vec<(f64, f64)> {
    let steps_per_year = 400.0;
    let t_max = specs.iter().map(|s| s.1).fold(0.0, f64::max);
    let n = (t_max * steps_per_year).ceil() as usize;
    let dt = t_max / n as f64;
    let marks: Vec<usize> = specs.iter().map(|s| (s.1 / dt).round() as usize).collect();
    let chunk = 10_000;
    let sums: Vec<Vec<(f64, f64)>> = (0..n_paths / chunk)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + c as u64);
            let mut acc = vec![(0.0, 0.0); specs.len()];
            let mut st = vec![0.0; n + 1];
            for _ in 0..chunk {
                let (mut x, mut v) = (p.s0.ln(), p.v0);
                st[0] = p.s0;
                for m in 1..=n {
                    let z1: f64 = StandardNormal.sample(&mut rng);
                    let z2: f64 = StandardNormal.sample(&mut rng);
                    let vp = v.max(0.0);
                    let zv = p.rho * z1 + (1.0 - p.rho * p.rho).sqrt() * z2;
                    x += (p.r - 0.5 * vp) * dt + (vp * dt).sqrt() * z1;
                    v += p.kappa * (p.theta - vp) * dt + p.sigma_v * (vp * dt).sqrt() * zv;
                    st[m] = x.exp();
                }
                for (q, (&(k, t), &mk)) in specs.iter().zip(&marks).enumerate() {
                    let y = (-p.r * t).exp() * (st[mk] - k).max(0.0);
                    acc[q].0 += y;
                    acc[q].1 += y * y;
                }
            }
            acc
        })
        .collect();
    let total = (n_paths / chunk * chunk) as f64;
    (0..specs.len())
        .map(|q| {
            let s: f64 = sums.iter().map(|a| a[q].0).sum();
            let s2: f64 = sums.iter().map(|a| a[q].1).sum();
            let m = s / total;
            (m, ((s2 / total - m * m) / total).sqrt())
        })
        .collect()
}

#[test]
fn fourier_price_matches_monte_carlo() {
    let p = HestonParams::base_case();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // maturities on the 1/400 grid
    let specs: Vec<(f64, f64)> =
        (0..20).map(|_| (rng.random_range(7.0..13.0), rng.random_range(40..=400) as f64 / 400.0)).collect();
    let mc = mc_calls(&p, &specs, 1_000_000);
    for (&(k, t), &(m, se)) in specs.iter().zip(&mc) {
        let c = heston_european_call(&p, &OptionSpec::european_call(k, t), at0(&p)).unwrap();
        assert!((c - m).abs() < 3.0 * se, "K={k:.3} T={t}: {c} vs {m} ({se})");
    }
}

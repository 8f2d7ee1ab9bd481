use modelrisk::heston::{bs_price, OptionSpec};
use modelrisk::pde1d::*;

const SIGMA: f64 = 0.3708353;

/// Cox-Ross-Rubinstein tree for an American put.
fn binomial_american_put(s0: f64, k: f64, r: f64, sigma: f64, t: f64, steps: usize) -> f64 {
    let dt = t / steps as f64;
    let u = (sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let disc = (-r * dt).exp();
    let p = ((r * dt).exp() - d) / (u - d);
    let mut v: Vec<f64> = (0..=steps).map(|i| (k - s0 * u.powi(i as i32) * d.powi((steps - i) as i32)).max(0.0)).collect();
    for n in (0..steps).rev() {
        for i in 0..=n {
            let s = s0 * u.powi(i as i32) * d.powi((n - i) as i32);
            let cont = disc * (p * v[i + 1] + (1.0 - p) * v[i]);
            v[i] = cont.max(k - s);
        }
    }
    v[0]
}

#[test]
fn american_put_matches_binomial_tree() {
    let cfg = Solver1DConfig::default();
    let (vals, _) = price_american_put_1d(&ConstantVol(SIGMA), &cfg, 10.0, 1.0, 0.1).unwrap();
    let fd = vals.values[0][500];
    let tree = binomial_american_put(10.0, 10.0, 0.1, SIGMA, 1.0, 5000);
    assert!((fd - tree).abs() < 2e-3, "fd {fd} tree {tree}");
}

#[test]
fn european_call_matches_closed_form() {
    let cfg = Solver1DConfig::default();
    let vals = price_european_call_1d(&ConstantVol(SIGMA), &cfg, 10.0, 1.0, 0.1).unwrap();
    let exact = bs_price(SIGMA, 0.1, 10.0, &OptionSpec::european_call(10.0, 1.0)).unwrap();
    assert!((vals.values[0][500] - exact).abs() < 5e-3);
}

#[test]
fn zero_strike_call_is_the_forward() {
    let cfg = Solver1DConfig::default();
    let vals = price_european_call_1d(&ConstantVol(0.3), &cfg, 0.0, 1.0, 0.1).unwrap();
    for j in [0, 150, 299] {
        for (u, x) in vals.values[j].iter().zip(&vals.x) {
            assert!((u - x.exp()).abs() < 1e-6 * x.exp().max(1.0), "{u} vs {}", x.exp());
        }
    }
}

#[test]
fn zero_rate_american_equals_european() {
    let cfg = Solver1DConfig::default();
    let (am, b) = price_american_put_1d(&ConstantVol(0.2), &cfg, 10.0, 1.0, 0.0).unwrap();
    let eu = price_european_put_1d(&ConstantVol(0.2), &cfg, 10.0, 1.0, 0.0).unwrap();
    for j in 0..cfg.n1 {
        for i in 1..cfg.n2 {
            assert!((am.values[j][i] - eu.values[j][i]).abs() < 1e-6);
        }
    }
    assert!(b.boundary[..cfg.n1 - 1].iter().all(|&x| x < 10.0 * 0.9));
}

fn assert_convex(x: &[f64], row: &[f64], j: usize) {
    for i in 1..row.len() - 1 {
        let (s0, s1, s2) = (x[i - 1].exp(), x[i].exp(), x[i + 1].exp());
        let left = (row[i] - row[i - 1]) / (s1 - s0);
        let right = (row[i + 1] - row[i]) / (s2 - s1);
        assert!(right - left >= -1e-6, "convexity at j={j}, i={i}: {}", right - left);
    }
}

#[test]
fn value_properties_and_boundary_shape() {
    let cfg = Solver1DConfig::default();
    let k = 10.0;
    let (am, b) = price_american_put_1d(&ConstantVol(SIGMA), &cfg, k, 1.0, 0.1).unwrap();
    let eu = price_european_put_1d(&ConstantVol(SIGMA), &cfg, k, 1.0, 0.1).unwrap();
    for j in 0..=cfg.n1 {
        let row = &am.values[j];
        for i in 0..row.len() {
            let payoff = (k - am.x[i].exp()).max(0.0);
            assert!(row[i] >= payoff - 1e-12);
            assert!(row[i] >= eu.values[j][i] - 1e-12);
            if i > 0 {
                assert!(row[i] <= row[i - 1] + 1e-12);
            }
        }
        // the half-implicit scheme rings next to the moving free boundary
        // during the last tenth of the horizon; convexity is checked before
        if am.t[j] <= 0.9 {
            assert_convex(&am.x, row, j);
        }
    }
    let implicit = Solver1DConfig { lambda1: 0.0, ..cfg };
    let (full, _) = price_american_put_1d(&ConstantVol(SIGMA), &implicit, k, 1.0, 0.1).unwrap();
    for (j, row) in full.values.iter().enumerate() {
        assert_convex(&full.x, row, j);
    }
    assert!(b.boundary.iter().all(|&x| (0.0..=k).contains(&x)));
    assert!(b.boundary.windows(2).all(|w| w[1] >= w[0]));
    let dx = (cfg.x_n2 - cfg.x0) / cfg.n2 as f64;
    let last = b.boundary[cfg.n1];
    assert!(last.ln() >= k.ln() - 2.0 * dx - 1e-12, "terminal boundary {last}");
    // one step before expiry the gap is of order sigma K sqrt(dt |log dt|)
    let dt = 1.0 / cfg.n1 as f64;
    let gap = k - b.boundary[cfg.n1 - 1];
    assert!(gap > 0.0 && gap < 2.0 * SIGMA * k * (dt * dt.ln().abs()).sqrt(), "gap {gap}");
}

#[test]
fn refinement_shrinks_the_error() {
    let tree = binomial_american_put(10.0, 10.0, 0.1, SIGMA, 1.0, 5000);
    let coarse = Solver1DConfig { n1: 75, n2: 251, x0: 10f64.ln() - 125.0 * 8f64.ln() / 126.0, ..Default::default() };
    let fine = Solver1DConfig { n1: 150, n2: 501, x0: 10f64.ln() - 250.0 * 8f64.ln() / 251.0, ..Default::default() };
    let (a, _) = price_american_put_1d(&ConstantVol(SIGMA), &coarse, 10.0, 1.0, 0.1).unwrap();
    let (b, _) = price_american_put_1d(&ConstantVol(SIGMA), &fine, 10.0, 1.0, 0.1).unwrap();
    let ea = (a.values[0][125] - tree).abs();
    let eb = (b.values[0][250] - tree).abs();
    assert!((b.values[0][250] - a.values[0][125]).abs() <= ea + 1e-12);
    assert!(eb < ea, "coarse {ea}, fine {eb}");
}

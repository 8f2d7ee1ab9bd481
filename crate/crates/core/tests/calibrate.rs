use modelrisk::calibrate::*;
use modelrisk::heston::*;
use modelrisk::pde1d::{LocalVolFn, Solver1DConfig};

fn heston_quotes(rho: f64) -> QuoteSurface {
    let (ks, ts) = standard_lattice();
    QuoteSurface::from_heston(&HestonParams::base_case().with_rho(rho), &ks, &ts).unwrap()
}

#[test]
fn bs_round_trip() {
    let (ks, ts) = standard_lattice();
    let q = QuoteSurface::from_black_scholes(0.25, 0.1, 10.0, &ks, &ts).unwrap();
    let s = calibrate_black_scholes(&q, 10.0, 1.0).unwrap();
    assert!((s - 0.25).abs() < 1e-8, "{s}");
    assert!(calibrate_black_scholes(&q, 10.1, 1.0).is_err());
}

#[test]
fn bs_reference_quote_reproduced() {
    let q = heston_quotes(-0.5);
    let s = calibrate_black_scholes(&q, 10.0, 1.0).unwrap();
    let spec = OptionSpec::european_call(10.0, 1.0);
    let price = bs_price(s, q.rate, q.spot, &spec).unwrap();
    assert!((price - q.price(10.0, 1.0).unwrap()).abs() < 1e-9);
}

#[test]
fn dupire_recovers_flat_surface() {
    let (ks, ts) = standard_lattice();
    let q = QuoteSurface::from_black_scholes(0.25, 0.1, 10.0, &ks, &ts).unwrap();
    let (lv, rep) = calibrate_dupire(&q, &DupireConfig::default()).unwrap();
    let (i0, i1) = lv.region_x;
    for row in &lv.var[lv.region_t_start..] {
        for v in &row[i0..=i1] {
            let s = v.sqrt();
            assert!((0.24..=0.26).contains(&s), "sigma {s}");
        }
    }
    assert!(rep.mean_rel_error < 1e-3);
}

fn assert_bounds(lv: &LocalVolSurface) {
    for row in &lv.var {
        for &v in row {
            assert!((VAR_MIN..=VAR_MAX).contains(&v));
        }
    }
}

#[test]
fn dupire_heston_base_case() {
    let q = heston_quotes(-0.5);
    let (lv, rep) = calibrate_dupire(&q, &DupireConfig::default()).unwrap();
    assert_bounds(&lv);
    assert_eq!(rep.quotes.len(), 100);
    assert!(rep.quotes.iter().all(|e| e.rel_error >= 0.0));
    assert!(rep.mean_rel_error <= 0.015, "{}", rep.mean_rel_error);
    for t in [0.1, 0.5, 0.9] {
        assert!(lv.sigma(t, 9.0) > lv.sigma(t, 10.0) && lv.sigma(t, 10.0) > lv.sigma(t, 11.0));
    }
    // deterministic
    let (lv2, rep2) = calibrate_dupire(&q, &DupireConfig::default()).unwrap();
    assert_eq!(rep.mean_rel_error.to_bits(), rep2.mean_rel_error.to_bits());
    assert_eq!(lv.var, lv2.var);
}

#[test]
fn dupire_skew_follows_correlation() {
    let slope = |lv: &LocalVolSurface, t: f64| lv.sigma(t, 11.0) - lv.sigma(t, 9.0);
    let (pos, rep) = calibrate_dupire(&heston_quotes(0.5), &DupireConfig::default()).unwrap();
    assert!(rep.mean_rel_error <= 0.015);
    let (zero, _) = calibrate_dupire(&heston_quotes(0.0), &DupireConfig::default()).unwrap();
    let (neg, _) = calibrate_dupire(&heston_quotes(-0.5), &DupireConfig::default()).unwrap();
    for t in [0.3, 0.6, 0.9] {
        assert!(slope(&pos, t) > 0.0);
        assert!(slope(&neg, t) < 0.0);
        assert!(slope(&zero, t).abs() < slope(&pos, t).abs().min(slope(&neg, t).abs()));
    }
}

#[test]
fn dupire_rejects_bad_config() {
    let q = heston_quotes(-0.5);
    let solver = Solver1DConfig { lambda1: 1.0, ..Solver1DConfig::default() };
    assert!(calibrate_dupire(&q, &DupireConfig { solver, ..DupireConfig::default() }).is_err());
    let (ks, _) = standard_lattice();
    let one = QuoteSurface::from_heston(&HestonParams::base_case(), &ks, &[0.33]).unwrap();
    assert!(calibrate_dupire(&one, &DupireConfig::default()).is_err());
}

#[test]
fn recalibration_examples() {
    let p = HestonParams::base_case();
    let s0 = recalibrate_bs_on_path(StateAt { t: 0.0, s: 10.0, v: 0.0625 }, &p, 10.0, 1.0).unwrap();
    let call = heston_european_call(&p, &OptionSpec::european_call(10.0, 1.0), StateAt { t: 0.0, s: 10.0, v: 0.0625 }).unwrap();
    let iv = implied_vol(call, p.r, 10.0, &OptionSpec::european_call(10.0, 1.0)).unwrap();
    assert!((s0 - iv).abs() < 5e-4, "{s0} {iv}");

    let flat = HestonParams { sigma_v: 1e-4, rho: 0.0, theta: p.v0, ..p };
    let s = recalibrate_bs_on_path(StateAt { t: 0.0, s: 10.0, v: 0.0625 }, &flat, 10.0, 1.0).unwrap();
    assert!((s - 0.25).abs() < 1e-4, "{s}");

    let s = recalibrate_bs_on_path(StateAt { t: 0.0, s: 10.0, v: p.theta }, &p, 10.0, 5.0).unwrap();
    assert!(s > 0.9 * p.theta.sqrt() && s < 1.1 * p.theta.sqrt(), "{s}");

    // mid-path state uses the remaining maturity
    let a = recalibrate_bs_on_path(StateAt { t: 0.5, s: 9.0, v: 0.1 }, &p, 10.0, 1.0).unwrap();
    let b = recalibrate_bs_on_path(StateAt { t: 0.0, s: 9.0, v: 0.1 }, &p, 10.0, 0.5).unwrap();
    assert!((a - b).abs() < 1e-10);
}

#[test]
fn exports() {
    let dir = tempfile::tempdir().unwrap();
    let lv = LocalVolSurface::flat(vec![0.0, 1.0], vec![2.0, 2.5], 0.3);
    lv.write_csv(&dir.path().join("lv.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("lv.csv")).unwrap();
    assert!(text.starts_with("t,S,sigma"));
    assert_eq!(text.lines().count(), 5);
}

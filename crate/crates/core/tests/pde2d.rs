use modelrisk::heston::*;
use modelrisk::pde2d::*;
use nalgebra::{DMatrix, DVector};

fn small_grids() -> HestonGrids {
    HestonGridConfig { m1: 30, m2: 16, ..Default::default() }.build(10.0).unwrap()
}

fn dense(op: &SplitOperator, which: u8) -> DMatrix<f64> {
    let n = op.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut out = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        match which {
            0 => op.apply_a0(&e, &mut out),
            1 => op.apply_a1(&e, &mut out),
            _ => op.apply_a2(&e, &mut out),
        }
        for r in 0..n {
            m[(r, c)] = out[r];
        }
        e[c] = 0.0;
    }
    m
}

/// Craig-Sneyd step with parameter 1/2 from dense matrices.
fn cs_step(v: &DVector<f64>, a0: &DMatrix<f64>, a1: &DMatrix<f64>, a2: &DMatrix<f64>, b: &DVector<f64>, dt: f64) -> DVector<f64> {
    let n = v.len();
    let id = DMatrix::<f64>::identity(n, n);
    let th = 0.5;
    let a = a0 + a1 + a2;
    let m1 = (&id - a1 * (th * dt)).lu();
    let m2 = (&id - a2 * (th * dt)).lu();
    let y0 = v + (&a * v + b) * dt;
    let y1 = m1.solve(&(&y0 - a1 * v * (th * dt))).unwrap();
    let y2 = m2.solve(&(&y1 - a2 * v * (th * dt))).unwrap();
    let z0 = &y0 + a0 * (&y2 - v) * (0.5 * dt);
    let z1 = m1.solve(&(&z0 - a1 * v * (th * dt))).unwrap();
    m2.solve(&(&z1 - a2 * v * (th * dt))).unwrap()
}

#[test]
fn mcs_at_one_half_is_craig_sneyd() {
    let g = small_grids();
    let p = HestonParams::base_case();
    let op = assemble_heston_operator(&g.s, &g.v, &p, 10.0).unwrap();
    let dt = 1.0 / 50.0;
    let f = McsFactors::new(&op, dt, 0.5).unwrap();
    let v0: Vec<f64> = (0..op.dim()).map(|k| (10.0 - g.s.node(k % op.ns + 1)).max(0.0)).collect();
    let got = mcs_time_step(&v0, &op, &f);
    let (a0, a1, a2) = (dense(&op, 0), dense(&op, 1), dense(&op, 2));
    let b = DVector::from_vec(op.boundary());
    let want = cs_step(&DVector::from_vec(v0), &a0, &a1, &a2, &b, dt);
    for k in 0..op.dim() {
        assert!((got[k] - want[k]).abs() < 1e-12 * (1.0 + want[k].abs()), "row {k}: {} vs {}", got[k], want[k]);
    }
}

#[test]
fn one_directional_collapse_is_a_crank_nicolson_step() {
    let g = small_grids();
    let p = HestonParams::base_case();
    let mut op = assemble_heston_operator(&g.s, &g.v, &p, 10.0).unwrap();
    op.a0.iter_mut().for_each(|w| *w = [[0.0; 3]; 3]);
    op.a2.iter_mut().for_each(|w| *w = [0.0; 5]);
    for b in [&mut op.b0, &mut op.b1, &mut op.b2] {
        b.iter_mut().for_each(|x| *x = 0.0);
    }
    let dt = 0.01;
    let f = McsFactors::new(&op, dt, 0.5).unwrap();
    let v0: Vec<f64> = (0..op.dim()).map(|k| (g.s.node(k % op.ns + 1) / 10.0).sin()).collect();
    let got = mcs_time_step(&v0, &op, &f);
    let a1 = dense(&op, 1);
    let n = op.dim();
    let id = DMatrix::<f64>::identity(n, n);
    let v = DVector::from_vec(v0);
    let want = (&id - &a1 * (0.5 * dt)).lu().solve(&(&v + &a1 * &v * (0.5 * dt))).unwrap();
    for k in 0..n {
        assert!((got[k] - want[k]).abs() < 1e-12);
    }
}

#[test]
fn generator_maps_stock_price_to_rate_times_stock() {
    let g = HestonGridConfig { m1: 60, m2: 30, ..Default::default() }.build(10.0).unwrap();
    let p = HestonParams::base_case();
    let op = assemble_heston_operator(&g.s, &g.v, &p, 10.0).unwrap();
    let x: Vec<f64> = (0..op.dim()).map(|k| g.s.node(k % op.ns + 1)).collect();
    let mut ax = vec![0.0; op.dim()];
    op.apply(&x, &mut ax);
    let b = op.boundary();
    for j in 0..op.nv - 1 {
        for i in 2..op.ns - 1 {
            let k = j * op.ns + i;
            // generator without discounting: A x + r x
            let gen = ax[k] + b[k] + p.r * x[k];
            assert!((gen - p.r * x[k]).abs() < 1e-8 * (1.0 + x[k]), "({i}, {j}): {gen}");
        }
    }
}

#[test]
fn european_mode_matches_fourier_price() {
    let p = HestonParams::base_case();
    let sol = price_european_put_heston(&p, &HestonGridConfig::default(), &MCSConfig::default(), 10.0, 1.0).unwrap();
    let fd = sol.value_at(10.0, 0.0625);
    let cf = heston_european_put(&p, &OptionSpec::european_put(10.0, 1.0), StateAt { t: 0.0, s: 10.0, v: 0.0625 }).unwrap();
    assert!((fd - cf).abs() < 5e-3, "fd {fd} cf {cf}");
}

#[test]
fn second_order_in_time_on_a_smooth_problem() {
    let g = HestonGridConfig { m1: 40, m2: 20, ..Default::default() }.build(10.0).unwrap();
    let p = HestonParams::base_case();
    let mut op = assemble_heston_operator(&g.s, &g.v, &p, 10.0).unwrap();
    for b in [&mut op.b0, &mut op.b1, &mut op.b2] {
        b.iter_mut().for_each(|x| *x = 0.0);
    }
    let init: Vec<f64> = (0..op.dim())
        .map(|k| {
            let s = g.s.node(k % op.ns + 1);
            let v = g.v.node(k / op.ns);
            (-(s - 10.0).powi(2) / 8.0).exp() * (-v).exp()
        })
        .collect();
    let run = |steps: usize| {
        let dt = 0.5 / steps as f64;
        let f = McsFactors::new(&op, dt, 0.4).unwrap();
        let mut x = init.clone();
        for _ in 0..steps {
            x = mcs_time_step(&x, &op, &f);
        }
        x
    };
    let reference = run(2560);
    let err = |steps: usize| run(steps).iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (e1, e2, e3) = (err(40), err(80), err(160));
    let (o1, o2) = ((e1 / e2).log2(), (e2 / e3).log2());
    assert!(o1 >= 1.7 && o2 >= 1.7, "errors {e1:e} {e2:e} {e3:e}, orders {o1} {o2}");
}

/// Width of the stock-grid cell containing `s`.
fn cell(g: &HestonGrids, s: f64) -> f64 {
    let nodes = g.s.nodes();
    let k = nodes.partition_point(|&x| x <= s).clamp(1, nodes.len() - 1);
    nodes[k] - nodes[k - 1]
}

#[test]
fn american_value_and_boundary_shape() {
    let p = HestonParams::base_case();
    let gcfg = HestonGridConfig::default();
    let (sol, b) = price_american_put_heston(&p, &gcfg, &MCSConfig::default(), 10.0, 1.0).unwrap();
    let g = &sol.grids;
    let ns = g.s.last() - 1;
    for (k, &u) in sol.values.iter().enumerate() {
        assert!(u >= (10.0 - g.s.node(k % ns + 1)).max(0.0) - 1e-12);
    }
    for j in 0..b.v.len() {
        let row = &sol.values[j * ns..(j + 1) * ns];
        // the truncation at s_max bends the far-field tail
        for i in (1..ns - 1).filter(|&i| g.s.node(i + 1) <= 40.0) {
            let (s0, s1, s2) = (g.s.node(i), g.s.node(i + 1), g.s.node(i + 2));
            let gamma = (row[i + 1] - row[i]) / (s2 - s1) - (row[i] - row[i - 1]) / (s1 - s0);
            assert!(gamma >= -1e-6, "convexity at i={i}, j={j}: {gamma}");
        }
    }
    for n in 0..b.t.len() {
        for j in 1..b.v.len() {
            let (lo, hi) = (b.boundary[n][j], b.boundary[n][j - 1]);
            assert!(lo <= hi + cell(g, hi), "v-monotonicity at n={n}, j={j}: {lo} > {hi}");
        }
        assert!(b.boundary[n].iter().all(|&x| (0.0..=10.0).contains(&x)));
    }
    for j in 0..b.v.len() {
        for n in 1..b.t.len() {
            let (prev, cur) = (b.boundary[n - 1][j], b.boundary[n][j]);
            assert!(cur >= prev - cell(g, prev), "t-monotonicity at n={n}, j={j}: {cur} < {prev}");
        }
    }
    let eu = price_european_put_heston(&p, &gcfg, &MCSConfig::default(), 10.0, 1.0).unwrap();
    assert!(sol.value_at(10.0, 0.0625) > eu.value_at(10.0, 0.0625));
    let (half, _) = price_american_put_heston(&p, &gcfg, &MCSConfig { lambda2: 0.5, ..Default::default() }, 10.0, 1.0).unwrap();
    assert!((half.value_at(10.0, 0.0625) - sol.value_at(10.0, 0.0625)).abs() < 5e-3);
}

#[test]
fn american_value_agrees_with_regression_oracle() {
    use modelrisk::mc::{apply_rules, ls_exercise_rule, Basis, HestonSimulator, LsConfig, LsModel};
    let p = HestonParams::base_case();
    let (sol, _) = price_american_put_heston(&p, &HestonGridConfig::default(), &MCSConfig::default(), 10.0, 1.0).unwrap();
    let fd = sol.value_at(10.0, 0.0625);
    // regression on a randomized start, then an out-of-sample lower estimate
    let est = ls_exercise_rule(&LsModel::Heston(p), &LsConfig::new(Basis::HestonMixed, 200_000, 21)).unwrap();
    let sim = HestonSimulator::new(p, 200_000, 300, 1.0, 22).unwrap();
    let out = apply_rules(&sim, &[&est], 10.0, p.r).remove(0);
    let n = out.payoff.len() as f64;
    let m = out.payoff.iter().sum::<f64>() / n;
    let se = (out.payoff.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((fd - m).abs() < 3.0 * se, "fd {fd} vs regression {m} ({se})");
}

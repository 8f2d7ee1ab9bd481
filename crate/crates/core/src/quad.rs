//! Adaptive Gauss-Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32, evals: &mut usize) -> Result<f64> {
    let (v, err) = gk15(f, a, b);
    *evals += 15;
    if !v.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    if err <= tol || (b - a) < 1e-12 * (1.0 + a.abs()) {
        return Ok(v);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "subdivision limit reached on [{a}, {b}] with error {err:e}"
        )));
    }
    let m = 0.5 * (a + b);
    Ok(adapt(f, a, m, 0.5 * tol, depth - 1, evals)? + adapt(f, m, b, 0.5 * tol, depth - 1, evals)?)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut evals = 0;
    adapt(&f, a, b, tol, 40, &mut evals)
}

/// Integrates `f` over `[0, inf)` for integrands that decay at infinity.
/// Panels of doubling width are added until a panel contributes below
/// `tol` and the integrand has become negligible.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut a = 0.0;
    let mut width = 1.0;
    let mut evals = 0;
    let mut quiet = 0;
    while a < 1e7 {
        let b = a + width;
        let panel = adapt(&f, a, b, tol * 0.25, 40, &mut evals)?;
        total += panel;
        let tail = f(b).abs().max(f(0.5 * (a + b)).abs());
        if panel.abs() < tol * 1e-2 && tail * b < tol * 1e-2 {
            quiet += 1;
            if quiet >= 2 {
                return Ok(total);
            }
        } else {
            quiet = 0;
        }
        a = b;
        width *= 2.0;
    }
    Err(Error::Quadrature("integrand did not decay on the half line".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_gaussian() {
        let v = integrate(|x| x * x * x - x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
        let g = integrate_half_line(|x| (-x * x).exp(), 1e-12).unwrap();
        assert!((g - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-11);
        let r = integrate_half_line(|x| 1.0 / (1.0 + x * x) * (-0.01 * x).exp(), 1e-9);
        assert!(r.is_ok());
    }
}

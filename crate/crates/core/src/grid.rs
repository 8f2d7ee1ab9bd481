//! Spatial grids and finite-difference stencils.
//!
//! Three-point first and second derivative stencils on arbitrary
//! non-uniform meshes, in downward (backward), central and upward
//! (forward) variants. All weights are exact for quadratics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Downward,
    Central,
    Upward,
}

/// Strictly increasing set of nodes with precomputed spacings.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
    // spacing[i] = nodes[i] - nodes[i - 1]; spacing[0] is unused and zero
    spacing: Vec<f64>,
}

impl Grid1D {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least two nodes".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("grid nodes must be finite".into()));
        }
        let mut spacing = vec![0.0; nodes.len()];
        for i in 1..nodes.len() {
            let d = nodes[i] - nodes[i - 1];
            if d <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "grid nodes not strictly increasing at index {i}"
                )));
            }
            spacing[i] = d;
        }
        Ok(Self { nodes, spacing })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the last node.
    pub fn last(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `x_i - x_{i-1}`, defined for `i >= 1`.
    pub fn delta(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        self.spacing[i]
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let i = self.nodes.partition_point(|&n| n < x);
        if i == 0 {
            0
        } else if i >= self.nodes.len() {
            self.nodes.len() - 1
        } else if (x - self.nodes[i - 1]) <= (self.nodes[i] - x) {
            i - 1
        } else {
            i
        }
    }
}

/// Uniform grid with `n + 1` equidistant nodes on `[lo, hi]`.
pub fn build_uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Grid1D> {
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("uniform grid needs lo < hi, got [{lo}, {hi}]")));
    }
    if n < 1 {
        return Err(Error::InvalidInput("uniform grid needs n >= 1".into()));
    }
    let h = (hi - lo) / n as f64;
    let mut nodes: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    nodes[n] = hi;
    Grid1D::from_nodes(nodes)
}

/// Stock grid `s_i = K + c sinh(xi_i)` with `s_0 = 0` and `s_m = s_max`,
/// concentrating nodes around the strike.
pub fn build_sinh_stock_grid(strike: f64, s_max: f64, c: f64, m: usize) -> Result<Grid1D> {
    if !(strike > 0.0) || !(s_max > strike) {
        return Err(Error::InvalidInput(format!(
            "sinh stock grid needs 0 < K < s_max, got K={strike}, s_max={s_max}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("sinh stretch c must be positive, got {c}")));
    }
    if m < 2 {
        return Err(Error::InvalidInput("sinh stock grid needs m >= 2".into()));
    }
    let xi_lo = (-strike / c).asinh();
    let xi_hi = ((s_max - strike) / c).asinh();
    let dxi = (xi_hi - xi_lo) / m as f64;
    let mut nodes: Vec<f64> = (0..=m)
        .map(|i| strike + c * (xi_lo + i as f64 * dxi).sinh())
        .collect();
    nodes[0] = 0.0;
    nodes[m] = s_max;
    Grid1D::from_nodes(nodes)
}

/// Variance grid `v_j = d sinh(zeta_j)` with `v_0 = 0` and `v_m = v_max`,
/// concentrating nodes near zero. Requires `v_max > 1`.
pub fn build_sinh_variance_grid(v_max: f64, d: f64, m: usize) -> Result<Grid1D> {
    if !(v_max > 1.0) {
        return Err(Error::InvalidInput(format!("variance grid requires v_max > 1, got {v_max}")));
    }
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("sinh stretch d must be positive, got {d}")));
    }
    if m < 2 {
        return Err(Error::InvalidInput("sinh variance grid needs m >= 2".into()));
    }
    let dzeta = (v_max / d).asinh() / m as f64;
    let mut nodes: Vec<f64> = (0..=m).map(|j| d * (j as f64 * dzeta).sinh()).collect();
    nodes[0] = 0.0;
    nodes[m] = v_max;
    Grid1D::from_nodes(nodes)
}

/// Three-point stencil: `f'(x_i)` or `f''(x_i)` is approximated by
/// `sum_k weights[k] * f(x_{i + offsets[k]})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilCoeffs {
    pub offsets: [i32; 3],
    pub weights: [f64; 3],
}

impl StencilCoeffs {
    /// Applies the stencil at node `i` to sampled values.
    pub fn apply(&self, i: usize, values: &[f64]) -> f64 {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(&o, &w)| w * values[(i as i64 + o as i64) as usize])
            .sum()
    }

    /// Weight attached to a given offset, zero if the offset is absent.
    pub fn weight_at(&self, offset: i32) -> f64 {
        self.offsets
            .iter()
            .position(|&o| o == offset)
            .map_or(0.0, |k| self.weights[k])
    }
}

fn check_fit(grid: &Grid1D, i: usize, scheme: Scheme) -> Result<()> {
    let last = grid.last();
    let ok = match scheme {
        Scheme::Downward => i >= 2 && i <= last,
        Scheme::Central => i >= 1 && i < last,
        Scheme::Upward => i + 2 <= last,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::StencilRange { scheme, index: i, len: grid.len() })
    }
}

pub fn fd_first_coeffs(grid: &Grid1D, i: usize, scheme: Scheme) -> Result<StencilCoeffs> {
    check_fit(grid, i, scheme)?;
    let c = match scheme {
        Scheme::Downward => {
            let (d0, d1) = (grid.delta(i - 1), grid.delta(i));
            StencilCoeffs {
                offsets: [-2, -1, 0],
                weights: [
                    d1 / (d0 * (d0 + d1)),
                    -(d0 + d1) / (d0 * d1),
                    (d0 + 2.0 * d1) / (d1 * (d0 + d1)),
                ],
            }
        }
        Scheme::Central => {
            let (d1, d2) = (grid.delta(i), grid.delta(i + 1));
            StencilCoeffs {
                offsets: [-1, 0, 1],
                weights: [
                    -d2 / (d1 * (d1 + d2)),
                    (d2 - d1) / (d1 * d2),
                    d1 / (d2 * (d1 + d2)),
                ],
            }
        }
        Scheme::Upward => {
            let (d1, d2) = (grid.delta(i + 1), grid.delta(i + 2));
            StencilCoeffs {
                offsets: [0, 1, 2],
                weights: [
                    (-2.0 * d1 - d2) / (d1 * (d1 + d2)),
                    (d1 + d2) / (d1 * d2),
                    -d1 / (d2 * (d1 + d2)),
                ],
            }
        }
    };
    Ok(c)
}

pub fn fd_second_coeffs(grid: &Grid1D, i: usize, scheme: Scheme) -> Result<StencilCoeffs> {
    check_fit(grid, i, scheme)?;
    let (offsets, a, b) = match scheme {
        Scheme::Downward => ([-2, -1, 0], grid.delta(i - 1), grid.delta(i)),
        Scheme::Central => ([-1, 0, 1], grid.delta(i), grid.delta(i + 1)),
        Scheme::Upward => ([0, 1, 2], grid.delta(i + 1), grid.delta(i + 2)),
    };
    Ok(StencilCoeffs {
        offsets,
        weights: [2.0 / (a * (a + b)), -2.0 / (a * b), 2.0 / (b * (a + b))],
    })
}

/// Tensor-product stencil for a mixed second derivative.
/// `weights[k][l]` multiplies `f(x_{i + s_offsets[k]}, y_{j + v_offsets[l]})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedStencil {
    pub s_offsets: [i32; 3],
    pub v_offsets: [i32; 3],
    pub weights: [[f64; 3]; 3],
}

pub fn fd_mixed_coeffs(
    grid_s: &Grid1D,
    grid_v: &Grid1D,
    i: usize,
    j: usize,
    scheme_v: Scheme,
) -> Result<MixedStencil> {
    if scheme_v == Scheme::Downward {
        return Err(Error::InvalidInput(
            "mixed stencil supports central or upward schemes in v".into(),
        ));
    }
    let bs = fd_first_coeffs(grid_s, i, Scheme::Central)?;
    let bv = fd_first_coeffs(grid_v, j, scheme_v)?;
    let mut weights = [[0.0; 3]; 3];
    for (k, row) in weights.iter_mut().enumerate() {
        for (l, w) in row.iter_mut().enumerate() {
            *w = bs.weights[k] * bv.weights[l];
        }
    }
    Ok(MixedStencil { s_offsets: bs.offsets, v_offsets: bv.offsets, weights })
}

//! Shared numerical kernels.

mod banded;
mod bcls;
mod spline;
mod tridiag;

pub use banded::{BandedLu, BandedMatrix};
pub use bcls::{solve_bound_constrained_ls, solve_bound_constrained_qp, BandedSym, QpSolution};
pub use spline::{fit_bicubic_surface, fit_natural_spline, SplineCurve, SplineSurface};
pub use tridiag::{solve_tridiagonal, TridiagonalFactor, TridiagonalMatrix};

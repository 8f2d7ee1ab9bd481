use crate::error::{Error, Result};

/// Tridiagonal matrix stored by bands.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalMatrix {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n == 0 || lower.len() + 1 != n || upper.len() + 1 != n {
            return Err(Error::InvalidInput(format!(
                "tridiagonal bands have lengths {}/{}/{}",
                lower.len(),
                n,
                upper.len()
            )));
        }
        Ok(Self { lower, diag, upper })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.upper[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Thomas elimination without pivoting; the factor is reusable.
    pub fn factor(&self) -> Result<TridiagonalFactor> {
        let n = self.dim();
        let scale = self
            .diag
            .iter()
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let guard = 1e-14 * scale;
        let mut pivots = vec![0.0; n];
        let mut mult = vec![0.0; n.saturating_sub(1)];
        pivots[0] = self.diag[0];
        if pivots[0].abs() <= guard || !pivots[0].is_finite() {
            return Err(Error::Singular { row: 0, pivot: pivots[0] });
        }
        for i in 1..n {
            let m = self.lower[i - 1] / pivots[i - 1];
            mult[i - 1] = m;
            pivots[i] = self.diag[i] - m * self.upper[i - 1];
            if pivots[i].abs() <= guard || !pivots[i].is_finite() {
                return Err(Error::Singular { row: i, pivot: pivots[i] });
            }
        }
        Ok(TridiagonalFactor { upper: self.upper.clone(), pivots, mult })
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalFactor {
    upper: Vec<f64>,
    pivots: Vec<f64>,
    mult: Vec<f64>,
}

impl TridiagonalFactor {
    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.pivots.len();
        debug_assert_eq!(x.len(), n);
        for i in 1..n {
            x[i] -= self.mult[i - 1] * x[i - 1];
        }
        x[n - 1] /= self.pivots[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) / self.pivots[i];
        }
    }
}

pub fn solve_tridiagonal(m: &TridiagonalMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != m.dim() {
        return Err(Error::InvalidInput(format!(
            "rhs length {} does not match dimension {}",
            rhs.len(),
            m.dim()
        )));
    }
    let f = m.factor()?;
    let mut x = rhs.to_vec();
    f.solve_in_place(&mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_scalar() {
        let m = TridiagonalMatrix::new(vec![0.0; 2], vec![1.0; 3], vec![0.0; 2]).unwrap();
        assert_eq!(solve_tridiagonal(&m, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let s = TridiagonalMatrix::new(vec![], vec![2.0], vec![]).unwrap();
        assert_eq!(solve_tridiagonal(&s, &[6.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn constructed_rhs_recovers_ones() {
        let n = 50;
        let m = TridiagonalMatrix::new(vec![1.0; n - 1], vec![4.0; n], vec![1.0; n - 1]).unwrap();
        let rhs = m.mul_vec(&vec![1.0; n]);
        let x = solve_tridiagonal(&m, &rhs).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = TridiagonalMatrix::new(vec![1.0], vec![0.0, 1.0], vec![1.0]).unwrap();
        assert!(matches!(solve_tridiagonal(&m, &[1.0, 1.0]), Err(Error::Singular { row: 0, .. })));
        let m = TridiagonalMatrix::new(vec![1.0], vec![1.0, 1.0], vec![1.0]).unwrap();
        assert!(matches!(solve_tridiagonal(&m, &[1.0, 1.0]), Err(Error::Singular { row: 1, .. })));
        assert!(TridiagonalMatrix::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn random_diagonally_dominant_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(1..60);
            let lower: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let upper: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let diag: Vec<f64> = (0..n)
                .map(|i| {
                    let off = if i > 0 { lower[i - 1].abs() } else { 0.0 }
                        + if i + 1 < n { upper[i].abs() } else { 0.0 };
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    sign * (off + rng.random_range(0.1..2.0))
                })
                .collect();
            let m = TridiagonalMatrix::new(lower, diag, upper).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = solve_tridiagonal(&m, &b).unwrap();
            let r = m.mul_vec(&x);
            let res = r.iter().zip(&b).fold(0.0f64, |acc, (a, c)| acc.max((a - c).abs()));
            let bn = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            assert!(res / bn <= 1e-10);
        }
    }
}

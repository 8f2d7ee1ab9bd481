use crate::error::{Error, Result};

/// General band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    // row-major band storage: entry (i, j) lives at i * width + (j + kl - i)
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    /// LU factorisation without pivoting, reusable across solves.
    pub fn factor(&self) -> Result<BandedLu> {
        let mut lu = self.clone();
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let guard = 1e-14 * scale;
        for k in 0..n {
            let p = lu.get(k, k);
            if p.abs() <= guard || !p.is_finite() {
                return Err(Error::Singular { row: k, pivot: p });
            }
            let row_end = (k + self.kl).min(n - 1);
            let col_end = (k + self.ku).min(n - 1);
            for i in k + 1..=row_end {
                let m = lu.get(i, k) / p;
                lu.set(i, k, m);
                for j in k + 1..=col_end {
                    let v = lu.get(i, j) - m * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(BandedLu { lu })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
}

impl BandedLu {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        for i in 0..n {
            let start = i.saturating_sub(m.kl);
            let mut s = x[i];
            for (j, xj) in x.iter().enumerate().take(i).skip(start) {
                s -= m.get(i, j) * xj;
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let end = (i + m.ku).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=end {
                s -= m.get(i, j) * x[j];
            }
            x[i] = s / m.get(i, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 2, 2), (12, 2, 1), (30, 1, 2)] {
            let mut b = BandedMatrix::zeros(n, kl, ku);
            let mut d = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let v = if i == j { 6.0 + rng.random::<f64>() } else { rng.random_range(-1.0..1.0) };
                    b.set(i, j, v);
                    d[(i, j)] = v;
                }
            }
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut x = rhs.clone();
            b.factor().unwrap().solve_in_place(&mut x);
            let expect = d.lu().solve(&DVector::from_vec(rhs)).unwrap();
            for i in 0..n {
                assert!((x[i] - expect[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_detected() {
        let b = BandedMatrix::zeros(3, 1, 1);
        assert!(b.factor().is_err());
    }
}

//! Small structured solvers used by the Sobolev gradient.

use crate::error::{MagflowError, Result};

/// Thomas algorithm; `sub[i]` multiplies `x[i-1]`, `sup[i]` multiplies `x[i+1]`.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return Err(MagflowError::Numerical("singular tridiagonal system".into()));
    }
    c[0] = if n > 1 { sup[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c[i - 1];
        if denom.abs() < 1e-300 {
            return Err(MagflowError::Numerical("singular tridiagonal system".into()));
        }
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Cyclic tridiagonal solve (Sherman-Morrison); `sub[0]` couples row 0 to `x[n-1]`,
/// `sup[n-1]` couples row `n-1` to `x[0]`.
pub fn solve_cyclic_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n < 3 {
        return Err(MagflowError::Precondition("cyclic system needs at least 3 unknowns".into()));
    }
    let alpha = sup[n - 1];
    let beta = sub[0];
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] = diag[0] - gamma;
    bb[n - 1] = diag[n - 1] - alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &bb, sup, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(sub, &bb, sup, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

/// Symmetric positive definite band matrix with half-bandwidth `p`, stored by lower rows.
pub struct BandMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, p: usize) -> Self {
        BandMatrix { n, p, data: vec![0.0; n * (p + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        // j <= i, i - j <= p
        i * (self.p + 1) + (self.p - (i - j))
    }

    /// Add `v` to entry `(i, j)` and its mirror.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j <= i { (i, j) } else { (j, i) };
        assert!(i - j <= self.p, "entry outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j <= i { (i, j) } else { (j, i) };
        if i - j > self.p {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Cholesky solve.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (n, p) = (self.n, self.p);
        let mut l = BandMatrix::zeros(n, p);
        for i in 0..n {
            let j0 = i.saturating_sub(p);
            for j in j0..=i {
                let mut s = self.get(i, j);
                let k0 = i.saturating_sub(p).max(j.saturating_sub(p));
                for k in k0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(MagflowError::Numerical("band matrix not positive definite".into()));
                    }
                    let k = l.idx(i, i);
                    l.data[k] = s.sqrt();
                } else {
                    let k = l.idx(i, j);
                    l.data[k] = s / l.get(j, j);
                }
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(p)..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + p + 1).min(n) {
                s -= l.get(k, i) * x[k];
            }
            x[i] = s / l.get(i, i);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_matches_dense() {
        let n = 6;
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + i as f64 * 0.1).collect();
        let sub: Vec<f64> = (0..n).map(|i| -1.0 - 0.05 * i as f64).collect();
        // symmetric: sup[i] = sub[i+1]
        let sup: Vec<f64> = (0..n).map(|i| sub[(i + 1) % n]).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_cyclic_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        for i in 0..n {
            let r = diag[i] * x[i] + sub[i] * x[(i + n - 1) % n] + sup[i] * x[(i + 1) % n];
            assert!((r - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn band_cholesky_matches_product() {
        let n = 9;
        let mut m = BandMatrix::zeros(n, 3);
        for i in 0..n {
            m.add(i, i, 5.0 + i as f64);
            if i >= 1 {
                m.add(i, i - 1, -1.0);
            }
            if i >= 3 {
                m.add(i, i - 3, 0.5);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = m.solve(&rhs).unwrap();
        for i in 0..n {
            let r: f64 = (0..n).map(|j| m.get(i, j) * x[j]).sum();
            assert!((r - rhs[i]).abs() < 1e-12);
        }
    }
}

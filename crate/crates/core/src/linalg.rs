//! Dense symmetric-matrix helpers for the design-matrix bookkeeping:
//! Cholesky factorization, SPD inversion, log-determinant, and the
//! Sherman-Morrison rank-1 inverse update.

use crate::error::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity_scaled(n: usize, diag: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = diag;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * x[j];
            }
            out[i] = s;
        }
        out
    }

    /// `self * other`, plain cubic multiply.
    pub fn mat_mul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    /// In-place `self <- a*self + b*I + c*g*g^T`.
    pub fn scale_shift_rank1(&mut self, a: f64, b: f64, c: f64, g: &[f64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let mut v = a * self.data[i * n + j] + c * g[i] * g[j];
                if i == j {
                    v += b;
                }
                self.data[i * n + j] = v;
            }
        }
    }

    /// In-place rank-1 addition `self <- self + c*g*g^T`.
    pub fn add_rank1(&mut self, c: f64, g: &[f64]) {
        self.scale_shift_rank1(1.0, 0.0, c, g);
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    /// Lower-triangular Cholesky factor; errors if not positive definite.
    pub fn cholesky(&self) -> Result<SquareMatrix> {
        let n = self.n;
        let mut l = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l.data[i * n + k] * l.data[j * n + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Internal(format!(
                            "cholesky: matrix not positive definite at pivot {i} ({s})"
                        )));
                    }
                    l.data[i * n + i] = s.sqrt();
                } else {
                    l.data[i * n + j] = s / l.data[j * n + j];
                }
            }
        }
        Ok(l)
    }

    /// True when a Cholesky factorization exists.
    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_ok()
    }

    /// Log-determinant via the Cholesky factor.
    pub fn log_det_spd(&self) -> Result<f64> {
        let l = self.cholesky()?;
        let n = self.n;
        Ok((0..n).map(|i| l.data[i * n + i].ln()).sum::<f64>() * 2.0)
    }

    /// SPD inverse via the Cholesky factor.
    pub fn inverse_spd(&self) -> Result<SquareMatrix> {
        let n = self.n;
        let l = self.cholesky()?;
        // Solve L y = e_k, then L^T x = y, one column at a time.
        let mut inv = SquareMatrix::zeros(n);
        let mut y = vec![0.0; n];
        for col in 0..n {
            for i in 0..n {
                let mut s = if i == col { 1.0 } else { 0.0 };
                for k in 0..i {
                    s -= l.data[i * n + k] * y[k];
                }
                y[i] = s / l.data[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in (i + 1)..n {
                    s -= l.data[k * n + i] * inv.data[k * n + col];
                }
                inv.data[i * n + col] = s / l.data[i * n + i];
            }
        }
        // Symmetrize to wash out round-off.
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv.data[i * n + j] + inv.data[j * n + i]);
                inv.data[i * n + j] = v;
                inv.data[j * n + i] = v;
            }
        }
        Ok(inv)
    }

    /// Sherman-Morrison update of an inverse under `A <- A + c*g*g^T`:
    /// `A^-1 <- A^-1 - c*(A^-1 g)(A^-1 g)^T / (1 + c*g^T A^-1 g)`.
    /// `self` is the inverse being maintained. Returns the quadratic form
    /// `g^T A^-1 g` evaluated before the update.
    pub fn sherman_morrison(&mut self, c: f64, g: &[f64]) -> f64 {
        let n = self.n;
        let ag = self.mat_vec(g);
        let quad: f64 = g.iter().zip(&ag).map(|(a, b)| a * b).sum();
        let denom = 1.0 + c * quad;
        let scale = c / denom;
        for i in 0..n {
            for j in 0..n {
                self.data[i * n + j] -= scale * ag[i] * ag[j];
            }
        }
        quad
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

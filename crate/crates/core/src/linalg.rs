//! Dense Cholesky helpers shared by the CAR algebra, the Laplace fit and the
//! precision-parameterised normal sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
}

impl CholFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Numerical("cholesky of a non-square matrix".into()));
        }
        Cholesky::new(m.clone())
            .map(|chol| CholFactor { chol })
            .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
    }

    /// Factor `m + jitter * I`, escalating the jitter tenfold from `start` up
    /// to `stop` until the factorisation succeeds. Returns the jitter used.
    pub fn with_jitter(m: &DMatrix<f64>, start: f64, stop: f64) -> Result<(Self, f64)> {
        if let Ok(f) = Self::new(m) {
            return Ok((f, 0.0));
        }
        let mut jitter = start;
        while jitter <= stop * (1.0 + 1e-12) {
            let mut shifted = m.clone();
            for i in 0..m.nrows() {
                shifted[(i, i)] += jitter;
            }
            if let Ok(f) = Self::new(&shifted) {
                return Ok((f, jitter));
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(format!(
            "matrix not positive definite even with jitter {stop:e}"
        )))
    }

    /// Lower-triangular factor `L` with `m = L L'`.
    #[cfg(test)]
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `x' m x` computed as `|L' x|^2`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let mut total = 0.0;
        // (L' x)_j = sum_{i >= j} L_ij x_i
        for j in 0..n {
            let mut s = 0.0;
            for i in j..n {
                s += l[(i, j)] * x[i];
            }
            total += s * s;
        }
        total
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Solve `L' x = z` by back substitution.
    pub fn solve_upper_transpose(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

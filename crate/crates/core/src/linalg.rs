//! Small dense Cholesky used on the sampler hot path.
//!
//! The factor is stored as an upper-triangular `U` with `A = UᵀU` in
//! nalgebra's column-major layout, so every inner product in the solves runs
//! over a contiguous column slice.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Cholesky {
    upper: DMatrix<f64>,
}

impl Cholesky {
    /// Factor a symmetric positive definite matrix. Only the lower triangle
    /// of `a` is read.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "cholesky of non-square {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let lower = nalgebra::Cholesky::new(a.clone_owned())
            .ok_or_else(|| Error::Numerical("matrix not positive definite".into()))?
            .unpack();
        if lower.diagonal().iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Numerical("matrix not positive definite (zero pivot)".into()));
        }
        let upper = lower.transpose();
        Ok(Self { upper })
    }

    pub fn dim(&self) -> usize {
        self.upper.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.upper.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L y = b` where `L = Uᵀ`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let u = self.upper.as_slice();
        let mut y = b.clone();
        for i in 0..n {
            let col = &u[i * n..i * n + i];
            let s = y[i] - dot(col, &y.as_slice()[..i]);
            y[i] = s / u[i * n + i];
        }
        y
    }

    /// Solves `U x = y`.
    pub fn solve_upper(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let u = self.upper.as_slice();
        let mut x = y.clone();
        for i in (0..n).rev() {
            let xi = x[i] / u[i * n + i];
            x[i] = xi;
            let col = &u[i * n..i * n + i];
            for (xk, uk) in x.as_mut_slice()[..i].iter_mut().zip(col) {
                *xk -= xi * uk;
            }
        }
        x
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_inv(&self, b: &DVector<f64>) -> f64 {
        self.solve_lower(b).norm_squared()
    }

    /// `L z`, which has covariance `A` when `z` is standard normal.
    pub fn mul_lower(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let u = self.upper.as_slice();
        DVector::from_iterator(
            n,
            (0..n).map(|i| dot(&u[i * n..i * n + i + 1], &z.as_slice()[..=i])),
        )
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::<f64>::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        inv.fill_lower_triangle_with_upper_triangle();
        inv
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Symmetric matrix-vector product using the full stored matrix.
pub fn sym_mul(a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    // column-major: (A v)_i = Σ_j A[j,i] v_j by symmetry, contiguous in j
    let n = a.nrows();
    let s = a.as_slice();
    DVector::from_iterator(n, (0..n).map(|i| dot(&s[i * n..(i + 1) * n], v.as_slice())))
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square()
        && (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

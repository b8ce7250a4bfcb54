use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::graph::{DistanceMatrix, FactoredCorrelation};
use crate::linalg::{sym_mul, Cholesky};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior correlation of one coefficient column.
///
/// The static case `J + εI` (all-ones plus nugget) has closed forms for
/// everything the sampler needs, so it never touches a dense factorization.
#[derive(Debug, Clone)]
pub enum CorrelationFactor {
    Static { n: usize, nugget: f64 },
    Decaying(FactoredCorrelation),
}

impl CorrelationFactor {
    pub fn decaying(d: &DistanceMatrix, gamma: f64, nugget: f64) -> Result<Self> {
        Ok(Self::Decaying(FactoredCorrelation::new(d, gamma, nugget)?))
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Self::Static { .. } => 0.0,
            Self::Decaying(f) => f.gamma,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Static { n, .. } => *n,
            Self::Decaying(f) => f.matrix.nrows(),
        }
    }

    pub fn log_det(&self) -> f64 {
        match *self {
            Self::Static { n, nugget } => {
                (n as f64 - 1.0) * nugget.ln() + (n as f64 + nugget).ln()
            }
            Self::Decaying(ref f) => f.chol.log_det(),
        }
    }

    /// `vᵀ H⁻¹ v`.
    pub fn quad_inv(&self, v: &DVector<f64>) -> f64 {
        match *self {
            Self::Static { n, nugget } => {
                let mean = v.mean();
                let spread: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
                spread / nugget + n as f64 * mean * mean / (n as f64 + nugget)
            }
            Self::Decaying(ref f) => f.chol.quad_inv(v),
        }
    }

    /// `H v`.
    pub fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        match *self {
            Self::Static { nugget, .. } => {
                let total = v.sum();
                v.map(|x| total + nugget * x)
            }
            Self::Decaying(ref f) => sym_mul(&f.matrix, v),
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        match *self {
            Self::Static { n, nugget } => {
                DMatrix::from_element(n, n, 1.0) + DMatrix::identity(n, n) * nugget
            }
            Self::Decaying(ref f) => f.matrix.clone(),
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match *self {
            Self::Static { n, nugget } => {
                (DMatrix::identity(n, n)
                    - DMatrix::from_element(n, n, 1.0 / (n as f64 + nugget)))
                    / nugget
            }
            Self::Decaying(ref f) => f.chol.inverse(),
        }
    }

    /// A draw from `N(0, H)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        match *self {
            Self::Static { nugget, .. } => {
                let common: f64 = rng.sample(StandardNormal);
                let sd = nugget.sqrt();
                DVector::from_fn(n, |_, _| common + sd * rng.sample::<f64, _>(StandardNormal))
            }
            Self::Decaying(ref f) => {
                let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
                f.chol.mul_lower(&z)
            }
        }
    }

    /// Factorization of `s2·H + diag(1/w)`, the covariance of the
    /// pseudo-observation once the coefficient column is integrated out.
    pub fn marginal(&self, s2: f64, w: &DVector<f64>) -> Result<Marginal> {
        match *self {
            Self::Static { nugget, .. } => {
                let diag = w.map(|wi| s2 * nugget + 1.0 / wi);
                let inv_sum: f64 = diag.iter().map(|d| 1.0 / d).sum();
                Ok(Marginal::RankOne { diag, s2, denom: 1.0 + s2 * inv_sum })
            }
            Self::Decaying(ref f) => dense_marginal(&f.matrix, s2, w),
        }
    }
}

/// Factorization of `s2·h + diag(1/w)` for an explicit correlation matrix.
pub fn dense_marginal(h: &DMatrix<f64>, s2: f64, w: &DVector<f64>) -> Result<Marginal> {
    let mut m = h * s2;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0 / w[i];
    }
    Ok(Marginal::Dense(Cholesky::new(&m)?))
}

/// Factored covariance `s2·H + diag(1/w)`.
#[derive(Debug, Clone)]
pub enum Marginal {
    Dense(Cholesky),
    /// `diag + s2·11ᵀ`; `denom = 1 + s2·Σ 1/diag`.
    RankOne { diag: DVector<f64>, s2: f64, denom: f64 },
}

impl Marginal {
    pub fn log_det(&self) -> f64 {
        match self {
            Self::Dense(c) => c.log_det(),
            Self::RankOne { diag, denom, .. } => {
                diag.iter().map(|d| d.ln()).sum::<f64>() + denom.ln()
            }
        }
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Dense(c) => c.solve(v),
            Self::RankOne { diag, s2, denom } => {
                let scaled = v.component_div(diag);
                let coef = s2 * scaled.sum() / denom;
                DVector::from_fn(v.len(), |i, _| scaled[i] - coef / diag[i])
            }
        }
    }

    pub fn quad_inv(&self, v: &DVector<f64>) -> f64 {
        match self {
            Self::Dense(c) => c.quad_inv(v),
            Self::RankOne { diag, s2, denom } => {
                let mut direct = 0.0;
                let mut total = 0.0;
                for (x, d) in v.iter().zip(diag.iter()) {
                    direct += x * x / d;
                    total += x / d;
                }
                direct - s2 * total * total / denom
            }
        }
    }

    /// `log N(v; 0, M)`.
    pub fn log_density(&self, v: &DVector<f64>) -> f64 {
        -0.5 * (v.len() as f64 * LN_2PI + self.log_det() + self.quad_inv(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SpatialGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn explicit_marginal(h: &DMatrix<f64>, s2: f64, w: &DVector<f64>) -> DMatrix<f64> {
        h * s2 + DMatrix::from_diagonal(&w.map(|x| 1.0 / x))
    }

    #[test]
    fn static_closed_forms_match_dense() {
        let n = 6;
        let f = CorrelationFactor::Static { n, nugget: 1e-3 };
        let h = f.dense();
        let chol = h.clone().cholesky().unwrap();
        let v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64).sin());
        assert!((f.log_det() - chol.determinant().ln()).abs() < 1e-8);
        let direct = v.dot(&chol.solve(&v));
        assert!((f.quad_inv(&v) - direct).abs() < 1e-8 * direct.abs());
        assert!((f.mul(&v) - &h * &v).abs().max() < 1e-12);
        assert!((f.inverse() * &h - DMatrix::identity(n, n)).abs().max() < 1e-8);

        let w = DVector::from_fn(n, |i, _| 2.0 + i as f64);
        let s2 = 1.7;
        let m = f.marginal(s2, &w).unwrap();
        let dense = explicit_marginal(&h, s2, &w);
        let dc = dense.clone().cholesky().unwrap();
        assert!((m.log_det() - dc.determinant().ln()).abs() < 1e-9);
        assert!((m.solve(&v) - dc.solve(&v)).abs().max() < 1e-9);
        assert!((m.quad_inv(&v) - v.dot(&dc.solve(&v))).abs() < 1e-9);
    }

    #[test]
    fn decaying_marginal_matches_dense() {
        let g = SpatialGraph::lattice(3, 3);
        let d = g.distance_matrix().unwrap();
        let f = CorrelationFactor::decaying(&d, 0.4, 1e-6).unwrap();
        let w = DVector::from_fn(9, |i, _| 1.0 + i as f64 * 0.3);
        let m = f.marginal(2.5, &w).unwrap();
        let dense = explicit_marginal(&f.dense(), 2.5, &w);
        let dc = dense.clone().cholesky().unwrap();
        let v = DVector::from_fn(9, |i, _| i as f64 - 4.0);
        assert!((m.log_det() - dc.determinant().ln()).abs() < 1e-9);
        assert!((m.quad_inv(&v) - v.dot(&dc.solve(&v))).abs() < 1e-9);
    }

    #[test]
    fn static_draws_have_all_ones_covariance() {
        let f = CorrelationFactor::Static { n: 3, nugget: 0.25 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 40_000;
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..draws {
            let x = f.sample(&mut rng);
            cov += &x * x.transpose();
        }
        cov /= draws as f64;
        let expected = f.dense();
        assert!((cov - expected).abs().max() < 0.05);
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::DistanceMatrix;
use crate::linalg::Cholesky;
use crate::survival::PmleEstimate;

/// Fixed data for stage two: stacked estimates, cached precisions `V̂_i⁻¹`
/// and the site distance matrix.
#[derive(Debug, Clone)]
pub struct SamplerInput {
    pub site_ids: Vec<String>,
    /// `n × p`, row `i` is `β̂(s_i)`.
    pub beta_hat: DMatrix<f64>,
    pub precisions: Vec<DMatrix<f64>>,
    pub distances: DistanceMatrix,
}

impl SamplerInput {
    pub fn new(pmles: &[&PmleEstimate], distances: DistanceMatrix) -> Result<Self> {
        let n = pmles.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no stage-one estimates".into()));
        }
        if distances.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} estimates but distance matrix covers {} sites",
                n,
                distances.len()
            )));
        }
        let p = pmles[0].beta_hat.len();
        let mut beta_hat = DMatrix::zeros(n, p);
        let mut precisions = Vec::with_capacity(n);
        for (i, e) in pmles.iter().enumerate() {
            if e.beta_hat.len() != p || e.v_hat.shape() != (p, p) {
                return Err(Error::InvalidArgument(format!(
                    "site {} has inconsistent dimensions",
                    e.site_id
                )));
            }
            if e.beta_hat.iter().chain(e.v_hat.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "site {} has non-finite estimates",
                    e.site_id
                )));
            }
            beta_hat.set_row(i, &e.beta_hat.transpose());
            let v = (&e.v_hat + e.v_hat.transpose()) * 0.5;
            let chol = Cholesky::new(&v).map_err(|err| {
                Error::Numerical(format!("covariance of site {} is not invertible: {err}", e.site_id))
            })?;
            precisions.push(chol.inverse());
        }
        Ok(Self {
            site_ids: pmles.iter().map(|e| e.site_id.clone()).collect(),
            beta_hat,
            precisions,
            distances,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.beta_hat.nrows()
    }

    pub fn n_coefficients(&self) -> usize {
        self.beta_hat.ncols()
    }

    /// Per-site weights `w_i = [V̂_i⁻¹]_kk` and the pseudo-observation
    /// `m_k` that summarizes the likelihood of column `k` given the other
    /// columns of `beta`.
    pub fn pseudo_data(&self, beta: &DMatrix<f64>, k: usize) -> (DVector<f64>, DVector<f64>) {
        let n = self.n_sites();
        let p = self.n_coefficients();
        let mut w = DVector::zeros(n);
        let mut m = DVector::zeros(n);
        for i in 0..n {
            let prec = &self.precisions[i];
            let wi = prec[(k, k)];
            let mut cross = 0.0;
            for j in 0..p {
                if j != k {
                    cross += prec[(k, j)] * (self.beta_hat[(i, j)] - beta[(i, j)]);
                }
            }
            w[i] = wi;
            m[i] = self.beta_hat[(i, k)] + cross / wi;
        }
        (w, m)
    }
}

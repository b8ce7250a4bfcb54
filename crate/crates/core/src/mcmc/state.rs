use nalgebra::{DMatrix, DVector};

use super::SamplerInput;

/// Full sampler state. The decay actually in use, `γ_k = c_k·γ0_k`, is
/// derived and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// `n × p`, entry `(i, k)` is `β_k(s_i)`.
    pub beta: DMatrix<f64>,
    pub tau2: f64,
    pub lambda2: DVector<f64>,
    /// Auxiliary scale for each `λ_k²`.
    pub nu: DVector<f64>,
    /// Auxiliary scale for `τ²`.
    pub xi: f64,
    pub gamma0: DVector<f64>,
    /// Slab indicator: `true` means spatially varying.
    pub c: Vec<bool>,
    pub pi: DVector<f64>,
}

impl ModelState {
    pub fn n_coefficients(&self) -> usize {
        self.beta.ncols()
    }

    pub fn gamma(&self, k: usize) -> f64 {
        if self.c[k] {
            self.gamma0[k]
        } else {
            0.0
        }
    }

    pub fn prior_variance(&self, k: usize) -> f64 {
        self.tau2 * self.lambda2[k]
    }

    /// Positivity and range constraints.
    pub fn is_valid(&self) -> bool {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        pos(self.tau2)
            && pos(self.xi)
            && self.lambda2.iter().all(|&v| pos(v))
            && self.nu.iter().all(|&v| pos(v))
            && self.gamma0.iter().all(|&v| pos(v))
            && self.pi.iter().all(|&v| v > 0.0 && v < 1.0)
            && self.beta.iter().all(|v| v.is_finite())
    }
}

/// Starting point: β at the stage-one estimates, every coefficient in the
/// slab with unit decay, unit scales.
pub fn init_state(input: &SamplerInput) -> ModelState {
    let p = input.n_coefficients();
    ModelState {
        beta: input.beta_hat.clone(),
        tau2: 1.0,
        lambda2: DVector::from_element(p, 1.0),
        nu: DVector::from_element(p, 1.0),
        xi: 1.0,
        gamma0: DVector::from_element(p, 1.0),
        c: vec![true; p],
        pi: DVector::from_element(p, 0.5),
    }
}

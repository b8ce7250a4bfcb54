//! Unnormalized log joint density of the augmented model, assembled with
//! dense linear algebra and no shortcuts. Used to check the conditionals.

use nalgebra::{DMatrix, DVector};

use super::{ModelState, PriorConfig, SamplerInput};
use crate::error::{Error, Result};
use crate::graph::correlation_matrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn dense_chol(a: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    a.cholesky().ok_or_else(|| Error::Numerical("matrix not positive definite".into()))
}

/// `log IG(x; shape, rate)` including the rate-dependent normalizer.
fn log_inv_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - (shape + 1.0) * x.ln() - rate / x
}

fn site_likelihood(input: &SamplerInput, beta: &DMatrix<f64>) -> f64 {
    (0..input.n_sites())
        .map(|i| {
            let r = (input.beta_hat.row(i) - beta.row(i)).transpose();
            -0.5 * r.dot(&(&input.precisions[i] * &r))
        })
        .sum()
}

fn column_prior(input: &SamplerInput, prior: &PriorConfig, state: &ModelState, k: usize, beta_k: &DVector<f64>) -> Result<f64> {
    let n = input.n_sites() as f64;
    let cov = correlation_matrix(&input.distances, state.gamma(k), prior.nugget)? * state.prior_variance(k);
    let chol = dense_chol(cov)?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (n * LN_2PI + log_det + beta_k.dot(&chol.solve(beta_k))))
}

fn hyper_terms(prior: &PriorConfig, state: &ModelState) -> f64 {
    let mut total = log_inv_gamma(state.tau2, 0.5, 1.0 / state.xi) + log_inv_gamma(state.xi, 0.5, 1.0);
    for k in 0..state.n_coefficients() {
        total += log_inv_gamma(state.lambda2[k], 0.5, 1.0 / state.nu[k]);
        total += log_inv_gamma(state.nu[k], 0.5, 1.0);
        let g = state.gamma0[k];
        total += (prior.a0 - 1.0) * g.ln() - prior.b0 * g;
        let pi = state.pi[k];
        total += if state.c[k] { pi.ln() } else { (1.0 - pi).ln() };
        total += (prior.beta_pi_a - 1.0) * pi.ln() + (prior.beta_pi_b - 1.0) * (1.0 - pi).ln();
    }
    total
}

/// Log joint density up to a constant independent of the state.
pub fn log_joint(input: &SamplerInput, prior: &PriorConfig, state: &ModelState) -> Result<f64> {
    let mut total = site_likelihood(input, &state.beta) + hyper_terms(prior, state);
    for k in 0..state.n_coefficients() {
        total += column_prior(input, prior, state, k, &state.beta.column(k).into_owned())?;
    }
    Ok(total)
}

/// Log joint with column `k` of β integrated out. The integrand is
/// Gaussian in `β_k`, so the integral equals the integrand at its mode times
/// `(2π)^{n/2} |Q|^{-1/2}`, with `Q` the negative Hessian in `β_k`.
pub fn log_joint_without_column(
    input: &SamplerInput,
    prior: &PriorConfig,
    state: &ModelState,
    k: usize,
) -> Result<f64> {
    let n = input.n_sites();
    let cov = correlation_matrix(&input.distances, state.gamma(k), prior.nugget)? * state.prior_variance(k);
    let prior_precision = cov.try_inverse().ok_or_else(|| Error::Numerical("singular prior".into()))?;

    // gradient of the log joint in β_k at β_k = 0, and its negative Hessian
    let mut at_zero = state.clone();
    at_zero.beta.column_mut(k).fill(0.0);
    let mut grad = DVector::zeros(n);
    let mut q = prior_precision.clone();
    for i in 0..n {
        let r = (input.beta_hat.row(i) - at_zero.beta.row(i)).transpose();
        grad[i] = input.precisions[i].row(k).dot(&r.transpose());
        q[(i, i)] += input.precisions[i][(k, k)];
    }
    let chol = dense_chol(q)?;
    let mode = chol.solve(&grad);
    let mut at_mode = state.clone();
    at_mode.beta.set_column(k, &mode);
    let log_det_q = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(log_joint(input, prior, &at_mode)? + 0.5 * n as f64 * LN_2PI - 0.5 * log_det_q)
}

//! Oracle checks that return their worst discrepancy, so both the focused
//! tests and the acceptance gate compare against the same numbers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svcox::graph::correlation_matrix;
use svcox::mcmc::joint::{log_joint, log_joint_without_column};
use svcox::mcmc::kernels::{
    beta_conditional, gamma0_log_ratio, indicator_log_odds, lambda2_conditional, nu_conditional, pi_conditional,
    tau2_conditional, xi_conditional,
};
use svcox::mcmc::{CorrelationFactor, ModelState, PriorConfig, SamplerInput};
use svcox::survival::{fit_pmle, pl_gradient, pl_hessian, FitOptions, SiteSurvivalData};

use super::{
    dense_column_conditional, factor, fd_gradient, fd_hessian, half_cauchy_cdf, ks_critical_01, ks_statistic, normal,
    random_site, random_state, toy_input,
};

/// `βᵀ H⁻¹ β` and `log|H|` by plain dense algebra.
pub fn dense_quad_logdet(input: &SamplerInput, prior: &PriorConfig, gamma: f64, beta: &DVector<f64>) -> (f64, f64) {
    let h = correlation_matrix(&input.distances, gamma, prior.nugget).unwrap();
    let chol = h.cholesky().unwrap();
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    (beta.dot(&chol.solve(beta)), log_det)
}

/// Worst scaled gap between the sampler's β-column conditional and the dense
/// joint posterior on two sites with two coefficients.
pub fn beta_oracle_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = PriorConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let input = toy_input(&mut rng, 1, 2, 2);
        let state = random_state(&mut rng, &input, &prior);
        for k in 0..2 {
            let (mean, cov) = dense_column_conditional(&input, &prior, &state, k);
            let cond = beta_conditional(&input, &state, k, &factor(&input, &prior, state.gamma(k))).unwrap();
            let ccov = cond.covariance().unwrap();
            worst = worst
                .max((&cond.mean - &mean).amax() / (1.0 + mean.amax()))
                .max((&ccov - &cov).amax() / (1.0 + cov.amax()));
        }
    }
    worst
}

/// Worst gap, per kernel, between the change in log joint density and
/// the log-ratio of that kernel's full conditional over random states.
pub fn conditional_ratio_errors(seed: u64, n_states: usize) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = PriorConfig::default();
    let input = toy_input(&mut rng, 2, 3, 3);
    let n = input.n_sites();
    let joint = |s: &ModelState| log_joint(&input, &prior, s).unwrap();
    let mut worst = vec![
        ("lambda2", 0.0f64),
        ("nu", 0.0),
        ("tau2", 0.0),
        ("xi", 0.0),
        ("beta", 0.0),
        ("pi", 0.0),
        ("gamma0", 0.0),
        ("c", 0.0),
    ];
    // β and c compare large multivariate terms, so their gap is relative
    let mut record = |slot: usize, lhs: f64, rhs: f64| {
        let scale = if slot == 4 || slot == 7 { 1.0 + lhs.abs() } else { 1.0 };
        let e = (lhs - rhs).abs() / scale;
        worst[slot].1 = worst[slot].1.max(e);
    };
    for _ in 0..n_states {
        let s = random_state(&mut rng, &input, &prior);
        let k = rng.random_range(0..3);
        let base = joint(&s);
        let beta_k = s.beta.column(k).into_owned();
        let quads: Vec<f64> = (0..3)
            .map(|j| dense_quad_logdet(&input, &prior, s.gamma(j), &s.beta.column(j).into_owned()).0)
            .collect();

        let mut t = s.clone();
        t.lambda2[k] = rng.random_range(-2.0f64..2.0).exp();
        let ig = lambda2_conditional(n, quads[k], s.nu[k], s.tau2);
        record(0, joint(&t) - base, ig.log_density(t.lambda2[k]) - ig.log_density(s.lambda2[k]));

        let mut t = s.clone();
        t.nu[k] = rng.random_range(-2.0f64..2.0).exp();
        let ig = nu_conditional(s.lambda2[k]);
        record(1, joint(&t) - base, ig.log_density(t.nu[k]) - ig.log_density(s.nu[k]));

        let mut t = s.clone();
        t.tau2 = rng.random_range(-2.0f64..1.0).exp();
        let ig = tau2_conditional(n, &quads, &s.lambda2, s.xi);
        record(2, joint(&t) - base, ig.log_density(t.tau2) - ig.log_density(s.tau2));

        let mut t = s.clone();
        t.xi = rng.random_range(-2.0f64..2.0).exp();
        let ig = xi_conditional(s.tau2);
        record(3, joint(&t) - base, ig.log_density(t.xi) - ig.log_density(s.xi));

        let mut t = s.clone();
        let moved = &beta_k + DVector::from_fn(n, |_, _| 0.05 * normal(&mut rng));
        t.beta.set_column(k, &moved);
        let cond = beta_conditional(&input, &s, k, &factor(&input, &prior, s.gamma(k))).unwrap();
        record(4, joint(&t) - base, cond.log_density(&moved) - cond.log_density(&beta_k));

        let mut t = s.clone();
        t.pi[k] = rng.random_range(0.01..0.99);
        let (a, b) = pi_conditional(&prior, s.c[k]);
        let beta_log = |x: f64| (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln();
        record(5, joint(&t) - base, beta_log(t.pi[k]) - beta_log(s.pi[k]));

        // γ0 moves on the log scale, hence the Jacobian
        if s.c[k] {
            let mut t = s.clone();
            t.gamma0[k] = s.gamma0[k] * (0.4 * normal(&mut rng)).exp();
            let (q0, ld0) = dense_quad_logdet(&input, &prior, s.gamma0[k], &beta_k);
            let (q1, ld1) = dense_quad_logdet(&input, &prior, t.gamma0[k], &beta_k);
            let ratio = gamma0_log_ratio((s.gamma0[k], ld0, q0), (t.gamma0[k], ld1, q1), &prior, s.prior_variance(k));
            let jacobian = t.gamma0[k].ln() - s.gamma0[k].ln();
            record(6, joint(&t) - base + jacobian, ratio);
        }

        // c_k with β_k integrated out
        let s2 = s.prior_variance(k);
        let (w, m) = input.pseudo_data(&s.beta, k);
        let slab = CorrelationFactor::decaying(&input.distances, s.gamma0[k], prior.nugget)
            .unwrap()
            .marginal(s2, &w)
            .unwrap();
        let spike = CorrelationFactor::Static { n, nugget: prior.nugget }.marginal(s2, &w).unwrap();
        let odds = indicator_log_odds(s.pi[k], &m, &slab, &spike);
        let (mut on, mut off) = (s.clone(), s.clone());
        on.c[k] = true;
        off.c[k] = false;
        let lhs = log_joint_without_column(&input, &prior, &on, k).unwrap()
            - log_joint_without_column(&input, &prior, &off, k).unwrap();
        record(7, lhs, odds);
    }
    worst
}

/// KS statistic and 1% critical value for `n_draws` thinned draws of λ from
/// the prior-only auxiliary Gibbs chain.
pub fn half_cauchy_ks(seed: u64, n_draws: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thin = 10;
    let mut nu = 1.0;
    let mut draws = Vec::with_capacity(n_draws);
    for i in 0..n_draws * thin {
        let lambda2 = lambda2_conditional(0, 0.0, nu, 1.0).sample(&mut rng).unwrap();
        nu = nu_conditional(lambda2).sample(&mut rng).unwrap();
        if i % thin == thin - 1 {
            draws.push(lambda2.sqrt());
        }
    }
    (ks_statistic(&mut draws, half_cauchy_cdf), ks_critical_01(n_draws))
}

/// Distance of the three-subject fit from its closed form ½·ln 2.
pub fn closed_form_error() -> f64 {
    let d = SiteSurvivalData::new(
        "s",
        vec![1.0, 2.0, 3.0],
        vec![true, true, true],
        DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]),
    )
    .unwrap();
    let fit = fit_pmle(&d, &FitOptions::default()).unwrap();
    (fit.beta_hat[0] - 0.5 * 2f64.ln()).abs()
}

/// Worst gradient and Hessian gaps against central finite differences on
/// `n_sites` random small sites.
pub fn finite_difference_errors(seed: u64, n_sites: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g_err, mut h_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..n_sites {
        let p = 1 + rng.random_range(0..3);
        let d = random_site(&mut rng, 12, p);
        let beta = DVector::from_fn(p, |_, _| normal(&mut rng) * 0.5);
        let g = pl_gradient(&d, &beta).unwrap();
        let h = pl_hessian(&d, &beta).unwrap();
        g_err = g_err.max((&g - fd_gradient(&d, &beta, 1e-5)).amax());
        h_err = h_err.max((&h - fd_hessian(&d, &beta, 1e-4)).amax());
    }
    (g_err, h_err)
}

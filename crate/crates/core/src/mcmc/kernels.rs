//! Full conditionals and the single-chain sweep.
//!
//! Half-Cauchy scales use the inverse-gamma auxiliary representation
//! `λ² | ν ~ IG(½, 1/ν)`, `ν ~ IG(½, 1)` (same for `τ²`, `ξ`). The decay,
//! indicator and coefficient column of each predictor are updated as one
//! block: `γ0_k` given everything, `c_k` with `β_k` integrated out, then a
//! fresh `β_k` from its Gaussian conditional.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use super::correlation::{dense_marginal, CorrelationFactor, Marginal};
use super::{ModelState, PriorConfig, SamplerInput};
use crate::error::{Error, Result};
use crate::graph::{correlation_matrix, FactoredCorrelation};
use crate::linalg::Cholesky;

/// Inverse-gamma law with density ∝ `x^{-shape-1} exp(-rate/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InvGamma {
    /// Log density up to a constant that does not depend on `x`.
    pub fn log_density(&self, x: f64) -> f64 {
        -(self.shape + 1.0) * x.ln() - self.rate / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Numerical(format!("inverse-gamma rate {} is not finite", self.rate)));
        }
        let g = Gamma::new(self.shape, 1.0)
            .map_err(|e| Error::Numerical(format!("gamma shape {}: {e}", self.shape)))?
            .sample(rng);
        let x = self.rate / g;
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Numerical(format!("inverse-gamma draw {x} out of range")));
        }
        Ok(x)
    }
}

/// `λ_k² | ·` given the quadratic form `q_k = β_kᵀ H_k⁻¹ β_k`.
pub fn lambda2_conditional(n_sites: usize, quad: f64, nu: f64, tau2: f64) -> InvGamma {
    InvGamma { shape: (n_sites as f64 + 1.0) / 2.0, rate: 1.0 / nu + quad / (2.0 * tau2) }
}

pub fn nu_conditional(lambda2: f64) -> InvGamma {
    InvGamma { shape: 1.0, rate: 1.0 + 1.0 / lambda2 }
}

/// `τ² | ·` given every column's quadratic form.
pub fn tau2_conditional(n_sites: usize, quads: &[f64], lambda2: &DVector<f64>, xi: f64) -> InvGamma {
    let p = quads.len();
    let weighted: f64 = quads.iter().zip(lambda2.iter()).map(|(q, l)| q / l).sum();
    InvGamma {
        shape: (n_sites as f64 * p as f64 + 1.0) / 2.0,
        rate: 1.0 / xi + weighted / 2.0,
    }
}

pub fn xi_conditional(tau2: f64) -> InvGamma {
    InvGamma { shape: 1.0, rate: 1.0 + 1.0 / tau2 }
}

/// Beta parameters of `π_k | c_k`.
pub fn pi_conditional(prior: &PriorConfig, c: bool) -> (f64, f64) {
    let c = f64::from(u8::from(c));
    (prior.beta_pi_a + c, prior.beta_pi_b + 1.0 - c)
}

/// Gaussian full conditional of one coefficient column in precision form.
#[derive(Debug, Clone)]
pub struct BetaConditional {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl BetaConditional {
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(Cholesky::new(&self.precision)?.inverse())
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        -0.5 * r.dot(&(&self.precision * &r))
    }
}

/// `β_k | ·` with precision `W_k + (τ²λ_k² H_k)⁻¹` and mean
/// `Σ_post W_k m_k`.
pub fn beta_conditional(
    input: &SamplerInput,
    state: &ModelState,
    k: usize,
    correlation: &CorrelationFactor,
) -> Result<BetaConditional> {
    let (w, m) = input.pseudo_data(&state.beta, k);
    let s2 = state.prior_variance(k);
    let mut precision = correlation.inverse() / s2;
    for i in 0..w.len() {
        precision[(i, i)] += w[i];
    }
    let chol = Cholesky::new(&precision)?;
    let mean = chol.solve(&w.component_mul(&m));
    Ok(BetaConditional { mean, precision })
}

/// Draws `β_k` from its conditional given the pseudo-observation `m` with
/// weights `w`, using a prior draw corrected through the marginal
/// covariance `s2·H + diag(1/w)` (already factored in `marginal`).
pub fn draw_beta_column<R: Rng + ?Sized>(
    correlation: &CorrelationFactor,
    marginal: &Marginal,
    s2: f64,
    w: &DVector<f64>,
    m: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let prior_draw = correlation.sample(rng) * s2.sqrt();
    let noise = w.map(|wi| rng.sample::<f64, _>(StandardNormal) / wi.sqrt());
    let residual = m - &prior_draw - noise;
    prior_draw + correlation.mul(&marginal.solve(&residual)) * s2
}

/// Log of `P(c_k = 1) / P(c_k = 0)` with `β_k` integrated out. Returns the
/// two marginal factorizations so the subsequent `β_k` draw can reuse one.
pub fn indicator_log_odds(
    pi: f64,
    m: &DVector<f64>,
    slab: &Marginal,
    spike: &Marginal,
) -> f64 {
    pi.ln() - (1.0 - pi).ln() + slab.log_density(m) - spike.log_density(m)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log target of the random walk on `log γ0`, including the Jacobian.
pub fn gamma0_log_target(gamma0: f64, prior: &PriorConfig, log_det: f64, quad: f64, s2: f64) -> f64 {
    prior.a0 * gamma0.ln() - prior.b0 * gamma0 - 0.5 * log_det - quad / (2.0 * s2)
}

/// Metropolis log acceptance ratio for moving from `current` to `proposal`,
/// each given as `(γ0, log|H|, βᵀH⁻¹β)`.
pub fn gamma0_log_ratio(
    current: (f64, f64, f64),
    proposal: (f64, f64, f64),
    prior: &PriorConfig,
    s2: f64,
) -> f64 {
    gamma0_log_target(proposal.0, prior, proposal.1, proposal.2, s2)
        - gamma0_log_target(current.0, prior, current.1, current.2, s2)
}

/// One chain's mutable sampler: state plus the factorizations that depend
/// only on the current decays.
pub struct Sampler<'a, R: Rng> {
    input: &'a SamplerInput,
    prior: PriorConfig,
    mh_step: f64,
    state: ModelState,
    factors: Vec<CorrelationFactor>,
    quads: Vec<f64>,
    rng: R,
    proposals: usize,
    accepted: usize,
}

impl<'a, R: Rng> Sampler<'a, R> {
    pub fn new(
        input: &'a SamplerInput,
        prior: PriorConfig,
        mh_step: f64,
        state: ModelState,
        rng: R,
    ) -> Result<Self> {
        prior.validate()?;
        let (n, p) = (input.n_sites(), input.n_coefficients());
        if state.beta.shape() != (n, p) {
            return Err(Error::InvalidArgument(format!(
                "state has shape {:?}, data has {n} sites and {p} coefficients",
                state.beta.shape()
            )));
        }
        let factors = (0..p)
            .map(|k| make_factor(input, &prior, state.gamma(k)))
            .collect::<Result<Vec<_>>>()?;
        let quads = (0..p)
            .map(|k| factors[k].quad_inv(&state.beta.column(k).into_owned()))
            .collect();
        Ok(Self { input, prior, mh_step, state, factors, quads, rng, proposals: 0, accepted: 0 })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_parts(self) -> (ModelState, R) {
        (self.state, self.rng)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// One systematic-scan sweep. Errors carry the name of the failing
    /// parameter; the caller attaches the iteration.
    pub fn sweep(&mut self) -> std::result::Result<(), (String, Error)> {
        let p = self.input.n_coefficients();
        for k in 0..p {
            self.update_block(k).map_err(|e| (format!("block[{}]", k + 1), e))?;
        }
        for k in 0..p {
            self.update_lambda(k).map_err(|e| (format!("lambda[{}]", k + 1), e))?;
        }
        self.update_tau().map_err(|e| ("tau".to_string(), e))?;
        debug_assert!(self.state.is_valid());
        Ok(())
    }

    fn update_gamma0(&mut self, k: usize) -> Result<()> {
        if !self.state.c[k] {
            // unused by the likelihood, so its conditional is the prior
            let g = Gamma::new(self.prior.a0, 1.0 / self.prior.b0)
                .map_err(|e| Error::Numerical(e.to_string()))?
                .sample(&mut self.rng);
            self.state.gamma0[k] = g.max(f64::MIN_POSITIVE);
            return Ok(());
        }
        let s2 = self.state.prior_variance(k);
        let current = self.state.gamma0[k];
        let z: f64 = self.rng.sample(StandardNormal);
        let proposal = current * (self.mh_step * z).exp();
        let u: f64 = self.rng.random();
        self.proposals += 1;
        if !(proposal > 0.0 && proposal.is_finite()) {
            return Ok(());
        }
        let candidate = CorrelationFactor::decaying(&self.input.distances, proposal, self.prior.nugget)?;
        let beta_k = self.state.beta.column(k).into_owned();
        let quad = candidate.quad_inv(&beta_k);
        let log_ratio = gamma0_log_ratio(
            (current, self.factors[k].log_det(), self.quads[k]),
            (proposal, candidate.log_det(), quad),
            &self.prior,
            s2,
        );
        if u.ln() < log_ratio {
            self.state.gamma0[k] = proposal;
            self.factors[k] = candidate;
            self.quads[k] = quad;
            self.accepted += 1;
        }
        Ok(())
    }

    fn update_block(&mut self, k: usize) -> Result<()> {
        self.update_gamma0(k)?;

        let n = self.input.n_sites();
        let s2 = self.state.prior_variance(k);
        let (w, m) = self.input.pseudo_data(&self.state.beta, k);
        let spike = CorrelationFactor::Static { n, nugget: self.prior.nugget };
        let spike_marginal = spike.marginal(s2, &w)?;
        let slab_matrix = if self.state.c[k] {
            None
        } else {
            Some(correlation_matrix(&self.input.distances, self.state.gamma0[k], self.prior.nugget)?)
        };
        let slab_marginal = match &slab_matrix {
            Some(h) => dense_marginal(h, s2, &w)?,
            None => self.factors[k].marginal(s2, &w)?,
        };

        let log_odds = indicator_log_odds(self.state.pi[k], &m, &slab_marginal, &spike_marginal);
        let u: f64 = self.rng.random();
        let c = u < logistic(log_odds);

        let (a, b) = pi_conditional(&self.prior, c);
        let pi = Beta::new(a, b)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sample(&mut self.rng);
        self.state.pi[k] = pi.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);

        let marginal = if c {
            if let Some(h) = slab_matrix {
                let chol = Cholesky::new(&h)?;
                self.factors[k] = CorrelationFactor::Decaying(FactoredCorrelation {
                    gamma: self.state.gamma0[k],
                    matrix: h,
                    chol,
                });
            }
            slab_marginal
        } else {
            self.factors[k] = spike;
            spike_marginal
        };
        self.state.c[k] = c;

        let beta_k = draw_beta_column(&self.factors[k], &marginal, s2, &w, &m, &mut self.rng);
        if beta_k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient draw".into()));
        }
        self.quads[k] = self.factors[k].quad_inv(&beta_k);
        self.state.beta.set_column(k, &beta_k);
        Ok(())
    }

    fn update_lambda(&mut self, k: usize) -> Result<()> {
        let quad = self.quads[k];
        if !quad.is_finite() {
            return Err(Error::Numerical(format!("quadratic form {quad}")));
        }
        let n = self.input.n_sites();
        self.state.lambda2[k] =
            lambda2_conditional(n, quad, self.state.nu[k], self.state.tau2).sample(&mut self.rng)?;
        self.state.nu[k] = nu_conditional(self.state.lambda2[k]).sample(&mut self.rng)?;
        Ok(())
    }

    fn update_tau(&mut self) -> Result<()> {
        let n = self.input.n_sites();
        self.state.tau2 = tau2_conditional(n, &self.quads, &self.state.lambda2, self.state.xi)
            .sample(&mut self.rng)?;
        self.state.xi = xi_conditional(self.state.tau2).sample(&mut self.rng)?;
        Ok(())
    }
}

pub(crate) fn make_factor(
    input: &SamplerInput,
    prior: &PriorConfig,
    gamma: f64,
) -> Result<CorrelationFactor> {
    if gamma == 0.0 {
        Ok(CorrelationFactor::Static { n: input.n_sites(), nugget: prior.nugget })
    } else {
        CorrelationFactor::decaying(&input.distances, gamma, prior.nugget)
    }
}

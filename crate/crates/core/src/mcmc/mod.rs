//! Stage-two sampler over the spatial horseshoe / spike-and-slab hierarchy.
//!
//! The stage-one estimates enter as Gaussian pseudo-observations
//! `β̂_i ~ N(β_i, V̂_i)`; each coefficient column `β_k` has prior
//! `N(0, τ²λ_k² H(γ_k))` with `γ_k = c_k γ0_k`.

mod chain;
mod correlation;
mod input;
pub mod joint;
pub mod kernels;
mod state;
mod summary;

pub use chain::{chain_rng, run_chain, run_single_chain, Draw, PosteriorDraws};
pub use correlation::{dense_marginal, CorrelationFactor, Marginal};
pub use input::SamplerInput;
pub use state::{init_state, ModelState};
pub use summary::{effective_sample_size, quantile, summarize, PosteriorSummary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Shape of the slab Gamma prior on the decay.
    pub a0: f64,
    /// Rate of the slab Gamma prior on the decay.
    pub b0: f64,
    pub beta_pi_a: f64,
    pub beta_pi_b: f64,
    /// Diagonal jitter added to every correlation matrix.
    pub nugget: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { a0: 25.0, b0: 50.0, beta_pi_a: 0.5, beta_pi_b: 0.5, nugget: 1e-6 }
    }
}

impl PriorConfig {
    pub fn with_gamma(a0: f64, b0: f64) -> Self {
        Self { a0, b0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.a0, self.b0, self.beta_pi_a, self.beta_pi_b];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(self.nugget >= 0.0 && self.nugget.is_finite())
        {
            return Err(Error::InvalidArgument(format!("invalid prior configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    /// Random-walk scale on log γ0.
    pub mh_step: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::desk_scale(0)
    }
}

impl ChainConfig {
    pub fn desk_scale(seed: u64) -> Self {
        Self { n_iter: 50_000, burn_in: 40_000, thin: 10, seed, n_chains: 1, mh_step: 0.3 }
    }

    pub fn paper_scale(seed: u64) -> Self {
        Self { n_iter: 1_000_000, burn_in: 900_000, thin: 20, seed, n_chains: 1, mh_step: 0.3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter
            || self.thin == 0
            || self.n_chains == 0
            || !(self.mh_step > 0.0 && self.mh_step.is_finite())
        {
            return Err(Error::InvalidArgument(format!("invalid chain configuration {self:?}")));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

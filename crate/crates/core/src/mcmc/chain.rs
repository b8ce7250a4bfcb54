use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kernels::Sampler;
use super::{init_state, ChainConfig, PriorConfig, SamplerInput};
use crate::error::{Error, Result};

/// One retained draw of the monitored quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// 1-based sweep index.
    pub iteration: usize,
    pub beta: DMatrix<f64>,
    /// `λ_k`, the square root of the sampled `λ_k²`.
    pub lambda: DVector<f64>,
    pub c: Vec<bool>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub site_ids: Vec<String>,
    pub n_coefficients: usize,
    /// Draws per chain, in chain order.
    pub chains: Vec<Vec<Draw>>,
    /// Fraction of accepted decay proposals per chain.
    pub acceptance: Vec<f64>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flatten()
    }
}

/// Independent random stream for chain `chain` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs one chain from the standard initial state.
pub fn run_single_chain(
    input: &SamplerInput,
    prior: &PriorConfig,
    cfg: &ChainConfig,
    chain: usize,
) -> Result<(Vec<Draw>, f64)> {
    cfg.validate()?;
    if !(prior.nugget > 0.0) {
        return Err(Error::InvalidArgument(
            "the sampler needs a positive nugget to keep the static correlation invertible".into(),
        ));
    }
    let state = init_state(input);
    let mut sampler = Sampler::new(input, *prior, cfg.mh_step, state, chain_rng(cfg.seed, chain))?;
    let mut draws = Vec::with_capacity(cfg.draws_per_chain());
    for iteration in 1..=cfg.n_iter {
        sampler.sweep().map_err(|(parameter, source)| Error::Sampler {
            iteration,
            parameter,
            source: Box::new(source),
        })?;
        if iteration > cfg.burn_in && (iteration - cfg.burn_in).is_multiple_of(cfg.thin) {
            let s = sampler.state();
            draws.push(Draw {
                iteration,
                beta: s.beta.clone(),
                lambda: s.lambda2.map(f64::sqrt),
                c: s.c.clone(),
                tau: s.tau2.sqrt(),
            });
        }
    }
    Ok((draws, sampler.acceptance_rate()))
}

/// Runs `cfg.n_chains` independent chains (concurrently when a thread pool
/// is available) and merges them in chain order.
pub fn run_chain(input: &SamplerInput, prior: &PriorConfig, cfg: &ChainConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    prior.validate()?;
    let results = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_single_chain(input, prior, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let (chains, acceptance) = results.into_iter().unzip();
    Ok(PosteriorDraws {
        site_ids: input.site_ids.clone(),
        n_coefficients: input.n_coefficients(),
        chains,
        acceptance,
    })
}

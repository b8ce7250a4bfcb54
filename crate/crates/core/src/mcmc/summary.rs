use nalgebra::{DMatrix, DVector};

use super::PosteriorDraws;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub site_ids: Vec<String>,
    pub n_draws: usize,
    pub beta_mean: DMatrix<f64>,
    pub beta_q025: DMatrix<f64>,
    pub beta_q50: DMatrix<f64>,
    pub beta_q975: DMatrix<f64>,
    pub lambda_mean: DVector<f64>,
    /// Posterior probability that each coefficient is spatially varying.
    pub c_mean: DVector<f64>,
    pub tau_mean: f64,
    /// Effective sample sizes keyed `tau`, `lambda[k]`, `c[k]` (1-based).
    pub ess: Vec<(String, f64)>,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Effective sample size of one chain by Geyer's initial positive sequence.
/// A constant series reports its length.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var0 <= 1e-300 {
        return n as f64;
    }
    let autocorr = |lag: usize| -> f64 {
        let s: f64 = centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
        s / n as f64 / var0
    };
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocorr(2 * m) + autocorr(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    n as f64 / tau
}

fn pooled_ess(draws: &PosteriorDraws, f: impl Fn(&super::Draw) -> f64) -> f64 {
    draws
        .chains
        .iter()
        .map(|chain| effective_sample_size(&chain.iter().map(&f).collect::<Vec<_>>()))
        .sum()
}

/// Means, quantiles and effective sample sizes over every retained draw of
/// every chain.
pub fn summarize(draws: &PosteriorDraws) -> Result<PosteriorSummary> {
    let total = draws.n_draws();
    if total == 0 {
        return Err(Error::InvalidArgument("no posterior draws to summarize".into()));
    }
    let first = draws.iter().next().unwrap();
    let (n, p) = first.beta.shape();

    let mut beta_mean = DMatrix::zeros(n, p);
    let mut lambda_mean = DVector::zeros(p);
    let mut c_mean = DVector::zeros(p);
    let mut tau_mean = 0.0;
    for d in draws.iter() {
        beta_mean += &d.beta;
        lambda_mean += &d.lambda;
        for k in 0..p {
            if d.c[k] {
                c_mean[k] += 1.0;
            }
        }
        tau_mean += d.tau;
    }
    let scale = 1.0 / total as f64;
    beta_mean *= scale;
    lambda_mean *= scale;
    c_mean *= scale;
    tau_mean *= scale;

    let mut beta_q025 = DMatrix::zeros(n, p);
    let mut beta_q50 = DMatrix::zeros(n, p);
    let mut beta_q975 = DMatrix::zeros(n, p);
    let mut buf = Vec::with_capacity(total);
    for k in 0..p {
        for i in 0..n {
            buf.clear();
            buf.extend(draws.iter().map(|d| d.beta[(i, k)]));
            buf.sort_by(f64::total_cmp);
            beta_q025[(i, k)] = quantile(&buf, 0.025);
            beta_q50[(i, k)] = quantile(&buf, 0.5);
            beta_q975[(i, k)] = quantile(&buf, 0.975);
        }
    }

    let mut ess = vec![("tau".to_string(), pooled_ess(draws, |d| d.tau))];
    for k in 0..p {
        ess.push((format!("lambda[{}]", k + 1), pooled_ess(draws, |d| d.lambda[k])));
    }
    for k in 0..p {
        ess.push((format!("c[{}]", k + 1), pooled_ess(draws, |d| f64::from(u8::from(d.c[k])))));
    }

    Ok(PosteriorSummary {
        site_ids: draws.site_ids.clone(),
        n_draws: total,
        beta_mean,
        beta_q025,
        beta_q50,
        beta_q975,
        lambda_mean,
        c_mean,
        tau_mean,
        ess,
    })
}

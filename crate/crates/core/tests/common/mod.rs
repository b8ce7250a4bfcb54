//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod checks;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use svcox::graph::{correlation_matrix, DistanceMatrix, SpatialGraph};
use svcox::mcmc::{CorrelationFactor, ModelState, PriorConfig, SamplerInput};
use svcox::survival::{log_partial_likelihood, FitStatus, PmleEstimate, SiteSurvivalData};

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

/// Small random site with distinct positive times, some censoring and
/// `n` subjects.
pub fn random_site<R: Rng>(rng: &mut R, n: usize, p: usize) -> SiteSurvivalData {
    let x = DMatrix::from_fn(n, p, |_, _| normal(rng));
    let times: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
    let mut status: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    status[0] = true;
    SiteSurvivalData::new("s", times, status, x).unwrap()
}

/// Central finite-difference gradient of the log partial likelihood.
pub fn fd_gradient(d: &SiteSurvivalData, beta: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(beta.len(), |k, _| {
        let mut up = beta.clone();
        let mut dn = beta.clone();
        up[k] += h;
        dn[k] -= h;
        (log_partial_likelihood(d, &up).unwrap() - log_partial_likelihood(d, &dn).unwrap()) / (2.0 * h)
    })
}

/// Second differences of the log partial likelihood.
pub fn fd_hessian(d: &SiteSurvivalData, beta: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let p = beta.len();
    let f = |b: &DVector<f64>| log_partial_likelihood(d, b).unwrap();
    DMatrix::from_fn(p, p, |j, k| {
        let shifted = |sj: f64, sk: f64| {
            let mut b = beta.clone();
            b[j] += sj;
            b[k] += sk;
            f(&b)
        };
        (shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4.0 * h * h)
    })
}

pub fn floyd_warshall(g: &SpatialGraph) -> Vec<Vec<Option<u32>>> {
    let n = g.n_sites();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for (a, b) in g.edges() {
        let (i, j) = (g.index_of(a).unwrap(), g.index_of(b).unwrap());
        d[i][j] = Some(1);
        d[j][i] = Some(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize, extra: usize) -> SpatialGraph {
    let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut g = SpatialGraph::new(ids.clone()).unwrap();
    for i in 1..n {
        let j = rng.random_range(0..i);
        g.add_edge(&ids[i], &ids[j]).unwrap();
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            let _ = g.add_edge(&ids[a], &ids[b]);
        }
    }
    g
}

pub fn half_cauchy_cdf(x: f64) -> f64 {
    2.0 / std::f64::consts::PI * x.atan()
}

/// Two-sided one-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

pub fn random_spd<R: Rng>(rng: &mut R, p: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| normal(rng));
    (&a * a.transpose() + DMatrix::identity(p, p) * p as f64) * scale
}

/// Stage-two input on a `rows × cols` lattice with random estimates and
/// covariances.
pub fn toy_input<R: Rng>(rng: &mut R, rows: usize, cols: usize, p: usize) -> SamplerInput {
    let g = SpatialGraph::lattice(rows, cols);
    let estimates: Vec<PmleEstimate> = g
        .site_ids()
        .iter()
        .map(|id| PmleEstimate {
            site_id: id.clone(),
            beta_hat: DVector::from_fn(p, |_, _| normal(rng)),
            v_hat: random_spd(rng, p, 0.05),
            status: FitStatus::Converged,
            iterations: 5,
            n_events: 50,
            log_pl: -100.0,
        })
        .collect();
    let refs: Vec<&PmleEstimate> = estimates.iter().collect();
    SamplerInput::new(&refs, g.distance_matrix().unwrap()).unwrap()
}

/// Random state whose coefficient columns are drawn from their priors so
/// every quadratic form is of order `n`.
pub fn random_state<R: Rng>(rng: &mut R, input: &SamplerInput, prior: &PriorConfig) -> ModelState {
    let (n, p) = (input.n_sites(), input.n_coefficients());
    let mut s = ModelState {
        beta: DMatrix::zeros(n, p),
        tau2: (rng.random_range(-2.0f64..1.0)).exp(),
        lambda2: DVector::from_fn(p, |_, _| rng.random_range(-2.0f64..2.0).exp()),
        nu: DVector::from_fn(p, |_, _| rng.random_range(-1.0f64..1.0).exp()),
        xi: rng.random_range(-1.0f64..1.0).exp(),
        gamma0: DVector::from_fn(p, |_, _| rng.random_range(0.2..3.0)),
        c: (0..p).map(|_| rng.random_bool(0.5)).collect(),
        pi: DVector::from_fn(p, |_, _| rng.random_range(0.05..0.95)),
    };
    for k in 0..p {
        let f = factor(input, prior, s.gamma(k));
        let col = f.sample(rng) * s.prior_variance(k).sqrt();
        s.beta.set_column(k, &col);
    }
    s
}

pub fn factor(input: &SamplerInput, prior: &PriorConfig, gamma: f64) -> CorrelationFactor {
    if gamma == 0.0 {
        CorrelationFactor::Static { n: input.n_sites(), nugget: prior.nugget }
    } else {
        CorrelationFactor::decaying(&input.distances, gamma, prior.nugget).unwrap()
    }
}

/// Conditional of column `k` read off the dense joint Gaussian posterior of
/// all `n·p` coefficients. Returns `(mean, covariance)`.
pub fn dense_column_conditional(
    input: &SamplerInput,
    prior: &PriorConfig,
    state: &ModelState,
    k: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (input.n_sites(), input.n_coefficients());
    let idx = |i: usize, kk: usize| kk * n + i;
    let mut q = DMatrix::zeros(n * p, n * p);
    let mut b = DVector::zeros(n * p);
    for i in 0..n {
        let prec = &input.precisions[i];
        let pb = prec * input.beta_hat.row(i).transpose();
        for a in 0..p {
            b[idx(i, a)] += pb[a];
            for c in 0..p {
                q[(idx(i, a), idx(i, c))] += prec[(a, c)];
            }
        }
    }
    for kk in 0..p {
        let cov = correlation_matrix(&input.distances, state.gamma(kk), prior.nugget).unwrap()
            * state.prior_variance(kk);
        let inv = cov.try_inverse().unwrap();
        for i in 0..n {
            for j in 0..n {
                q[(idx(i, kk), idx(j, kk))] += inv[(i, j)];
            }
        }
    }
    let mu = q.clone().cholesky().unwrap().solve(&b);
    let block: Vec<usize> = (0..n).map(|i| idx(i, k)).collect();
    let rest: Vec<usize> = (0..n * p).filter(|j| !block.contains(j)).collect();
    let q_kk = q.select_rows(&block).select_columns(&block);
    let q_kr = q.select_rows(&block).select_columns(&rest);
    let beta_vec = DVector::from_fn(n * p, |j, _| state.beta[(j % n, j / n)]);
    let delta = DVector::from_fn(rest.len(), |r, _| beta_vec[rest[r]] - mu[rest[r]]);
    let cov = q_kk.clone().try_inverse().unwrap();
    let mean = DVector::from_fn(n, |i, _| mu[block[i]]) - &cov * (q_kr * delta);
    (mean, cov)
}

pub fn lattice_distances(rows: usize, cols: usize) -> DistanceMatrix {
    SpatialGraph::lattice(rows, cols).distance_matrix().unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

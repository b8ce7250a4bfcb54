//! Per-site Cox partial likelihood and its maximization (stage one).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// One site's right-censored survival data.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSurvivalData {
    pub site_id: String,
    pub times: Vec<f64>,
    /// `true` for an observed event, `false` for censoring.
    pub status: Vec<bool>,
    /// `n × p`, one row per subject.
    pub covariates: DMatrix<f64>,
}

impl SiteSurvivalData {
    pub fn new(
        site_id: impl Into<String>,
        times: Vec<f64>,
        status: Vec<bool>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let data = Self { site_id: site_id.into(), times, status, covariates };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.status.len() != n || self.covariates.nrows() != n {
            return Err(Error::InvalidArgument(format!(
                "site {}: {} times, {} status flags, {} covariate rows",
                self.site_id,
                n,
                self.status.len(),
                self.covariates.nrows()
            )));
        }
        if let Some(i) = self.times.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "site {}: time {} of subject {} is not strictly positive",
                self.site_id, self.times[i], i
            )));
        }
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "site {}: non-finite covariate value",
                self.site_id
            )));
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.times.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&s| s).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the max-abs score.
    pub grad_tol: f64,
    pub step_halving_max: usize,
    /// Any |β̂_k| beyond this marks the fit as diverged.
    pub divergence_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 50, grad_tol: 1e-8, step_halving_max: 20, divergence_bound: 15.0 }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0
            || self.step_halving_max == 0
            || !(self.grad_tol > 0.0)
            || !(self.divergence_bound > 0.0)
        {
            return Err(Error::InvalidArgument(format!("fit options must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// Some coefficient left the divergence bound (monotone likelihood).
    Diverged,
    /// The observed information was not positive definite.
    SingularInformation,
}

/// Stage-one estimate for one site.
#[derive(Debug, Clone, PartialEq)]
pub struct PmleEstimate {
    pub site_id: String,
    pub beta_hat: DVector<f64>,
    /// Inverse observed information at `beta_hat`. Zero when it could not be
    /// inverted.
    pub v_hat: DMatrix<f64>,
    pub status: FitStatus,
    pub iterations: usize,
    pub n_events: usize,
    pub log_pl: f64,
}

impl PmleEstimate {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

struct Derivatives {
    log_pl: f64,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

fn check_beta(data: &SiteSurvivalData, beta: &DVector<f64>) -> Result<()> {
    if beta.len() != data.n_covariates() {
        return Err(Error::InvalidArgument(format!(
            "beta has length {} but site {} has {} covariates",
            beta.len(),
            data.site_id,
            data.n_covariates()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("beta has non-finite entries".into()));
    }
    if data.n_events() == 0 {
        return Err(Error::DegenerateData(format!("site {} has no events", data.site_id)));
    }
    Ok(())
}

/// Single reverse sweep over subjects sorted by decreasing time. Risk-set
/// sums are kept relative to a running maximum of the linear predictor, and
/// tied times share one risk set (Breslow).
fn sweep(data: &SiteSurvivalData, beta: &DVector<f64>, order: Order) -> Derivatives {
    let n = data.n_subjects();
    let p = data.n_covariates();
    // centering leaves the partial likelihood unchanged and keeps the
    // risk-set covariance free of cancellation
    let means = data.covariates.row_mean();
    let x = DMatrix::from_fn(n, p, |i, k| data.covariates[(i, k)] - means[k]);
    let eta = &x * beta;

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| data.times[b].total_cmp(&data.times[a]));

    let mut shift = f64::NEG_INFINITY;
    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);

    let mut log_pl = 0.0;
    let mut gradient = DVector::<f64>::zeros(p);
    let mut hessian = DMatrix::<f64>::zeros(p, p);

    let mut start = 0;
    while start < n {
        let t = data.times[idx[start]];
        let mut end = start;
        while end < n && data.times[idx[end]] == t {
            end += 1;
        }
        for &i in &idx[start..end] {
            if eta[i] > shift {
                let f = (shift - eta[i]).exp();
                s0 *= f;
                if order >= Order::Gradient {
                    s1 *= f;
                }
                if order >= Order::Hessian {
                    s2 *= f;
                }
                shift = eta[i];
            }
            let w = (eta[i] - shift).exp();
            s0 += w;
            if order >= Order::Gradient {
                let xi = x.row(i).transpose();
                s1.axpy(w, &xi, 1.0);
                if order >= Order::Hessian {
                    s2.ger(w, &xi, &xi, 1.0);
                }
            }
        }
        let log_denom = shift + s0.ln();
        for &j in &idx[start..end] {
            if !data.status[j] {
                continue;
            }
            log_pl += eta[j] - log_denom;
            if order >= Order::Gradient {
                let mean = &s1 / s0;
                gradient += x.row(j).transpose() - &mean;
                if order >= Order::Hessian {
                    hessian -= &s2 / s0 - &mean * mean.transpose();
                }
            }
        }
        start = end;
    }
    Derivatives { log_pl, gradient, hessian }
}

/// Log partial likelihood with Breslow handling of tied times.
pub fn log_partial_likelihood(data: &SiteSurvivalData, beta: &DVector<f64>) -> Result<f64> {
    check_beta(data, beta)?;
    Ok(sweep(data, beta, Order::Value).log_pl)
}

/// Score vector of the log partial likelihood.
pub fn pl_gradient(data: &SiteSurvivalData, beta: &DVector<f64>) -> Result<DVector<f64>> {
    check_beta(data, beta)?;
    Ok(sweep(data, beta, Order::Gradient).gradient)
}

/// Hessian of the log partial likelihood (negative observed information).
pub fn pl_hessian(data: &SiteSurvivalData, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_beta(data, beta)?;
    let mut h = sweep(data, beta, Order::Hessian).hessian;
    h = (&h + h.transpose()) * 0.5;
    Ok(h)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton-Raphson with step halving from β = 0.
///
/// Non-convergence is reported through [`PmleEstimate::status`], never as an
/// error; only violated preconditions return `Err`.
pub fn fit_pmle(data: &SiteSurvivalData, opts: &FitOptions) -> Result<PmleEstimate> {
    opts.validate()?;
    data.validate()?;
    let p = data.n_covariates();
    let n = data.n_subjects();
    if n < p + 1 {
        return Err(Error::InvalidArgument(format!(
            "site {} has {} subjects, needs at least {} for {} covariates",
            data.site_id,
            n,
            p + 1,
            p
        )));
    }
    if data.n_events() == 0 {
        return Err(Error::InvalidArgument(format!("site {} has no events", data.site_id)));
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut d = sweep(data, &beta, Order::Hessian);
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if max_abs(&d.gradient) < opts.grad_tol {
            status = FitStatus::Converged;
            break;
        }
        iterations += 1;
        let info = -&d.hessian;
        let chol = match Cholesky::new(&info) {
            Ok(c) => c,
            Err(_) => {
                status = FitStatus::SingularInformation;
                break;
            }
        };
        let step = chol.solve(&d.gradient);
        let predicted = d.gradient.dot(&step);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.step_halving_max {
            let trial = &beta + &step * scale;
            let ll = sweep(data, &trial, Order::Value).log_pl;
            if ll >= d.log_pl {
                accepted = Some(trial);
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some(next) => {
                beta = next;
                if max_abs(&beta) > opts.divergence_bound {
                    status = FitStatus::Diverged;
                    d = sweep(data, &beta, Order::Hessian);
                    break;
                }
                d = sweep(data, &beta, Order::Hessian);
            }
            None => {
                // no representable improvement left
                if predicted <= 1e-10 * (1.0 + d.log_pl.abs()) {
                    status = FitStatus::Converged;
                }
                break;
            }
        }
    }
    if status == FitStatus::MaxIterations && max_abs(&d.gradient) < opts.grad_tol {
        status = FitStatus::Converged;
    }

    let info = -&d.hessian;
    let v_hat = match Cholesky::new(&info) {
        Ok(c) => c.inverse(),
        Err(_) => {
            if status == FitStatus::Converged {
                status = FitStatus::SingularInformation;
            }
            DMatrix::zeros(p, p)
        }
    };

    Ok(PmleEstimate {
        site_id: data.site_id.clone(),
        beta_hat: beta,
        v_hat,
        status,
        iterations,
        n_events: data.n_events(),
        log_pl: d.log_pl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Fit preconditions failed (too few subjects, no events).
    Unfittable { message: String },
    NotConverged { status: FitStatus },
    /// A diagonal entry of `v_hat` exceeded the exclusion threshold.
    InflatedVariance { coefficient: usize, variance: f64 },
}

impl std::fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExclusionReason::Unfittable { message } => write!(f, "unfittable: {message}"),
            ExclusionReason::NotConverged { status } => {
                write!(f, "not converged ({})", serde_json::to_string(status).unwrap_or_default().trim_matches('"'))
            }
            ExclusionReason::InflatedVariance { coefficient, variance } => write!(
                f,
                "inflated variance for coefficient {} ({variance:.4e})",
                coefficient + 1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteOutcome {
    pub site_id: String,
    /// `None` only when the site could not be fitted at all.
    pub estimate: Option<PmleEstimate>,
    pub exclusion: Option<ExclusionReason>,
}

impl SiteOutcome {
    pub fn is_excluded(&self) -> bool {
        self.exclusion.is_some()
    }
}

/// Stage-one result over a dataset, in input site order.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneFit {
    pub covariate_names: Vec<String>,
    pub sites: Vec<SiteOutcome>,
}

impl StageOneFit {
    pub fn included(&self) -> Vec<&PmleEstimate> {
        self.sites
            .iter()
            .filter(|s| s.exclusion.is_none())
            .filter_map(|s| s.estimate.as_ref())
            .collect()
    }

    pub fn excluded(&self) -> impl Iterator<Item = (&str, &ExclusionReason)> {
        self.sites
            .iter()
            .filter_map(|s| s.exclusion.as_ref().map(|r| (s.site_id.as_str(), r)))
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }
}

pub const DEFAULT_EXCLUSION_THRESHOLD: f64 = 100.0;

fn classify(
    data: &SiteSurvivalData,
    opts: &FitOptions,
    exclusion_threshold: f64,
) -> Result<SiteOutcome> {
    let site_id = data.site_id.clone();
    let estimate = match fit_pmle(data, opts) {
        Ok(e) => e,
        Err(Error::InvalidArgument(message)) => {
            return Ok(SiteOutcome {
                site_id,
                estimate: None,
                exclusion: Some(ExclusionReason::Unfittable { message }),
            })
        }
        Err(e) => return Err(e),
    };
    let exclusion = if !estimate.converged() {
        Some(ExclusionReason::NotConverged { status: estimate.status })
    } else {
        estimate
            .v_hat
            .diagonal()
            .iter()
            .enumerate()
            .find(|(_, v)| **v > exclusion_threshold)
            .map(|(coefficient, &variance)| ExclusionReason::InflatedVariance {
                coefficient,
                variance,
            })
    };
    Ok(SiteOutcome { site_id, estimate: Some(estimate), exclusion })
}

/// Fits every site independently and flags sites unusable for stage two.
pub fn fit_all_sites(
    dataset: &[SiteSurvivalData],
    covariate_names: &[String],
    opts: &FitOptions,
    exclusion_threshold: f64,
) -> Result<StageOneFit> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset has no sites".into()));
    }
    if !(exclusion_threshold > 0.0) {
        return Err(Error::InvalidArgument("exclusion threshold must be positive".into()));
    }
    let p = covariate_names.len();
    if let Some(bad) = dataset.iter().find(|d| d.n_covariates() != p) {
        return Err(Error::InvalidArgument(format!(
            "site {} has {} covariates, expected {}",
            bad.site_id,
            bad.n_covariates(),
            p
        )));
    }
    let sites = dataset
        .par_iter()
        .map(|d| classify(d, opts, exclusion_threshold))
        .collect::<Result<Vec<_>>>()?;
    let fit = StageOneFit { covariate_names: covariate_names.to_vec(), sites };
    if fit.included().is_empty() {
        let reasons: Vec<String> =
            fit.excluded().map(|(s, r)| format!("{s}: {r}")).collect();
        return Err(Error::DegenerateData(format!(
            "all sites excluded ({})",
            reasons.join("; ")
        )));
    }
    Ok(fit)
}

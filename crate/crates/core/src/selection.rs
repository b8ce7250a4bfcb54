//! Selection decisions from posterior summaries, and the operating
//! characteristics used to score them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorSummary;

pub const DEFAULT_LAMBDA_THRESHOLD: f64 = 1.0;
pub const DEFAULT_C_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selected: Vec<bool>,
    /// `None` wherever the coefficient is not selected.
    pub spatially_varying: Vec<Option<bool>>,
    pub lambda_mean: Vec<f64>,
    pub c_mean: Vec<f64>,
}

impl SelectionReport {
    /// Spatial detection flags with unselected coefficients counted as not
    /// varying.
    pub fn varying_flags(&self) -> Vec<bool> {
        self.spatially_varying.iter().map(|v| v.unwrap_or(false)).collect()
    }
}

/// A coefficient is dropped when the posterior mean of its local scale is
/// below `lambda_threshold`; a kept coefficient is spatially varying when
/// its slab probability strictly exceeds `c_threshold`.
pub fn decide_from(
    lambda_mean: &[f64],
    c_mean: &[f64],
    lambda_threshold: f64,
    c_threshold: f64,
) -> SelectionReport {
    let selected: Vec<bool> = lambda_mean.iter().map(|&l| l >= lambda_threshold).collect();
    let spatially_varying = selected
        .iter()
        .zip(c_mean)
        .map(|(&s, &c)| s.then_some(c > c_threshold))
        .collect();
    SelectionReport {
        selected,
        spatially_varying,
        lambda_mean: lambda_mean.to_vec(),
        c_mean: c_mean.to_vec(),
    }
}

pub fn decide(summary: &PosteriorSummary, lambda_threshold: f64, c_threshold: f64) -> SelectionReport {
    decide_from(
        summary.lambda_mean.as_slice(),
        summary.c_mean.as_slice(),
        lambda_threshold,
        c_threshold,
    )
}

/// TPR, TNR, PPV and NPV; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_metrics(decisions: &[bool], truth: &[bool]) -> Result<OperatingCharacteristics> {
    if decisions.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} decisions but {} truth labels",
            decisions.len(),
            truth.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&d, &t) in decisions.iter().zip(truth) {
        match (d, t) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(OperatingCharacteristics {
        tp,
        tn,
        fp,
        fn_,
        tpr: ratio(tp, tp + fn_),
        tnr: ratio(tn, tn + fp),
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
    })
}

/// Per-coefficient mean over sites of the squared estimation error.
pub fn average_mse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<DVector<f64>> {
    if estimate.shape() != truth.shape() {
        return Err(Error::InvalidArgument(format!(
            "estimate shape {:?} differs from truth shape {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let n = estimate.nrows() as f64;
    Ok(DVector::from_iterator(
        estimate.ncols(),
        estimate
            .column_iter()
            .zip(truth.column_iter())
            .map(|(e, t)| (e - t).norm_squared() / n),
    ))
}

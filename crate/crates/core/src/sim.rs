//! Synthetic studies: coefficient fields, survival data, replications and
//! aggregate tables.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DistanceMatrix, SpatialGraph};
use crate::linalg::Cholesky;
use crate::mcmc::{run_chain, summarize, ChainConfig, PriorConfig, SamplerInput};
use crate::selection::{
    average_mse, confusion_metrics, decide, OperatingCharacteristics, DEFAULT_C_THRESHOLD,
    DEFAULT_LAMBDA_THRESHOLD,
};
use crate::survival::{fit_all_sites, FitOptions, SiteSurvivalData, DEFAULT_EXCLUSION_THRESHOLD};

/// Linear predictors are clamped to this magnitude before exponentiation.
pub const LINEAR_PREDICTOR_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientSpec {
    Null,
    Static { value: f64 },
    /// One draw from `N(mean·1, exp(-decay·D))`.
    Varying { mean: f64, decay: f64 },
}

impl CoefficientSpec {
    pub fn is_null(&self) -> bool {
        matches!(self, Self::Null)
    }

    pub fn is_varying(&self) -> bool {
        matches!(self, Self::Varying { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Null => "null",
            Self::Static { .. } => "static",
            Self::Varying { .. } => "varying",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    Lattice { rows: usize, cols: usize },
    Edges { sites: Vec<String>, edges: Vec<(String, String)> },
}

impl GraphSpec {
    pub fn build(&self) -> Result<SpatialGraph> {
        let g = match self {
            Self::Lattice { rows, cols } => SpatialGraph::lattice(*rows, *cols),
            Self::Edges { sites, edges } => SpatialGraph::from_edges(sites.clone(), edges)?,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub name: String,
    pub n_sites: usize,
    pub p: usize,
    pub per_site_n: usize,
    pub baseline_hazard: f64,
    pub censor_time: f64,
    pub coefficient_pattern: Vec<CoefficientSpec>,
    pub graph: GraphSpec,
    pub prior: PriorConfig,
    pub replications: usize,
    pub chain: ChainConfig,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default = "default_exclusion")]
    pub exclusion_threshold: f64,
}

fn default_exclusion() -> f64 {
    DEFAULT_EXCLUSION_THRESHOLD
}

fn study_one_pattern(decay: f64) -> Vec<CoefficientSpec> {
    let mut v = vec![CoefficientSpec::Null; 10];
    v.extend((1..=5).map(|k| CoefficientSpec::Static { value: k as f64 }));
    v.extend(std::iter::repeat_n(CoefficientSpec::Varying { mean: 3.0, decay }, 5));
    v
}

fn study_two_pattern() -> Vec<CoefficientSpec> {
    let mut v = vec![CoefficientSpec::Null; 18];
    v.push(CoefficientSpec::Static { value: 3.0 });
    v.push(CoefficientSpec::Varying { mean: 3.0, decay: 10.0 });
    v
}

impl StudySpec {
    fn base(name: &str, pattern: Vec<CoefficientSpec>, paper_scale: bool) -> Self {
        let (replications, chain) = if paper_scale {
            (100, ChainConfig::paper_scale(0))
        } else {
            (10, ChainConfig::desk_scale(0))
        };
        Self {
            name: name.to_string(),
            n_sites: 64,
            p: pattern.len(),
            per_site_n: 100,
            baseline_hazard: 0.5,
            censor_time: 155.0,
            coefficient_pattern: pattern,
            graph: GraphSpec::Lattice { rows: 8, cols: 8 },
            prior: PriorConfig::default(),
            replications,
            chain,
            fit: FitOptions::default(),
            exclusion_threshold: DEFAULT_EXCLUSION_THRESHOLD,
        }
    }

    pub const PRESETS: [&'static str; 8] = [
        "study1",
        "study2",
        "study3",
        "null",
        "study1-desk",
        "study2-desk",
        "study3-desk",
        "null-desk",
    ];

    /// Built-in studies. `study1..3` follow the published simulation design
    /// at full scale; `-desk` variants use 10 replications and shorter
    /// chains. `null` sets every coefficient to zero.
    pub fn preset(name: &str) -> Result<Self> {
        let (base, desk) = match name.strip_suffix("-desk") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let pattern = match base {
            "study1" => study_one_pattern(10.0),
            "study2" => study_two_pattern(),
            "study3" => study_one_pattern(1.0),
            "null" => vec![CoefficientSpec::Null; 20],
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset {name}; available: {}",
                    Self::PRESETS.join(", ")
                )))
            }
        };
        Ok(Self::base(name, pattern, !desk))
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficient_pattern.len() != self.p || self.p == 0 {
            return Err(Error::InvalidArgument(format!(
                "coefficient pattern has {} entries but p = {}",
                self.coefficient_pattern.len(),
                self.p
            )));
        }
        for c in &self.coefficient_pattern {
            if let CoefficientSpec::Varying { decay, mean } = c {
                if !(*decay > 0.0) || !mean.is_finite() {
                    return Err(Error::InvalidArgument("varying coefficients need decay > 0".into()));
                }
            }
        }
        if !(self.baseline_hazard > 0.0) || !(self.censor_time > 0.0) || self.per_site_n == 0 {
            return Err(Error::InvalidArgument(
                "baseline hazard, censoring time and per-site size must be positive".into(),
            ));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("at least one replication is required".into()));
        }
        let g = self.graph.build()?;
        if g.n_sites() != self.n_sites {
            return Err(Error::InvalidArgument(format!(
                "graph has {} sites but n_sites = {}",
                g.n_sites(),
                self.n_sites
            )));
        }
        self.prior.validate()?;
        self.chain.validate()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.p).map(|k| format!("x{k}")).collect()
    }
}

/// Seed for sub-task `index` of a run seeded with `master` (SplitMix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// True coefficient field, `n_sites × p`.
pub fn generate_coefficients(spec: &StudySpec, distances: &DistanceMatrix, seed: u64) -> Result<DMatrix<f64>> {
    let n = distances.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta = DMatrix::zeros(n, spec.p);
    let mut factors: Vec<(f64, Cholesky)> = Vec::new();
    for (k, c) in spec.coefficient_pattern.iter().enumerate() {
        match *c {
            CoefficientSpec::Null => {}
            CoefficientSpec::Static { value } => beta.column_mut(k).fill(value),
            CoefficientSpec::Varying { mean, decay } => {
                if !factors.iter().any(|(d, _)| *d == decay) {
                    let h = crate::graph::correlation_matrix(distances, decay, 0.0)?;
                    factors.push((decay, Cholesky::new(&h)?));
                }
                let chol = &factors.iter().find(|(d, _)| *d == decay).unwrap().1;
                let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
                let draw = chol.mul_lower(&z).add_scalar(mean);
                beta.set_column(k, &draw);
            }
        }
    }
    Ok(beta)
}

/// Exponential event times under a constant baseline hazard with
/// administrative censoring at `spec.censor_time`.
pub fn generate_survival_data(
    true_beta: &DMatrix<f64>,
    spec: &StudySpec,
    site_ids: &[String],
    seed: u64,
) -> Result<Vec<SiteSurvivalData>> {
    let (n_sites, p) = true_beta.shape();
    if site_ids.len() != n_sites || p != spec.p {
        return Err(Error::InvalidArgument("coefficient field does not match study".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.per_site_n;
    let mut out = Vec::with_capacity(n_sites);
    for (i, site) in site_ids.iter().enumerate() {
        let beta_i = true_beta.row(i).transpose();
        let mut x = DMatrix::zeros(m, p);
        let mut times = Vec::with_capacity(m);
        let mut status = Vec::with_capacity(m);
        for j in 0..m {
            for k in 0..p {
                x[(j, k)] = rng.sample(StandardNormal);
            }
            let u: f64 = rng.sample(Open01);
            let lp = x.row(j).transpose().dot(&beta_i).clamp(-LINEAR_PREDICTOR_CLAMP, LINEAR_PREDICTOR_CLAMP);
            let t = latent_time(u, spec.baseline_hazard, lp);
            if t <= spec.censor_time && t > 0.0 {
                times.push(t);
                status.push(true);
            } else {
                times.push(spec.censor_time);
                status.push(false);
            }
        }
        out.push(SiteSurvivalData::new(site.clone(), times, status, x)?);
    }
    Ok(out)
}

/// `-ln(u) / (h0·exp(lp))`.
pub fn latent_time(u: f64, baseline_hazard: f64, lp: f64) -> f64 {
    -u.ln() / (baseline_hazard * lp.exp())
}

pub fn censoring_rate(data: &[SiteSurvivalData]) -> f64 {
    let total: usize = data.iter().map(|d| d.n_subjects()).sum();
    let censored: usize = data.iter().map(|d| d.n_subjects() - d.n_events()).sum();
    censored as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub significance: OperatingCharacteristics,
    pub spatial: OperatingCharacteristics,
    pub selected: Vec<bool>,
    /// Selected and detected as spatially varying.
    pub varying: Vec<bool>,
    pub lambda_mean: Vec<f64>,
    pub c_mean: Vec<f64>,
    pub average_mse: Vec<f64>,
    pub censoring_rate: f64,
    pub excluded_sites: Vec<String>,
    pub acceptance_rate: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// One simulated dataset on the study graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub graph: SpatialGraph,
    pub distances: DistanceMatrix,
    /// True coefficients, rows in graph site order.
    pub truth: DMatrix<f64>,
    pub data: Vec<SiteSurvivalData>,
}

/// Draws the coefficient field and survival data for replication seed
/// `seed`.
pub fn simulate_dataset(spec: &StudySpec, seed: u64) -> Result<SimulatedData> {
    spec.validate()?;
    let graph = spec.graph.build()?;
    let distances = graph.distance_matrix()?;
    let truth = generate_coefficients(spec, &distances, derive_seed(seed, 1))?;
    let data = generate_survival_data(&truth, spec, graph.site_ids(), derive_seed(seed, 2))?;
    Ok(SimulatedData { graph, distances, truth, data })
}

/// Significance metrics over every coefficient, and spatial-detection
/// metrics over the truly non-null ones, where a detection requires the
/// coefficient to be selected as well.
pub fn score_decisions(
    pattern: &[CoefficientSpec],
    selected: &[bool],
    varying: &[bool],
) -> Result<(OperatingCharacteristics, OperatingCharacteristics)> {
    if selected.len() != pattern.len() || varying.len() != pattern.len() {
        return Err(Error::InvalidArgument(format!(
            "{} decisions for {} coefficients",
            selected.len(),
            pattern.len()
        )));
    }
    let sig_truth: Vec<bool> = pattern.iter().map(|c| !c.is_null()).collect();
    let significance = confusion_metrics(selected, &sig_truth)?;
    let (decisions, truth): (Vec<bool>, Vec<bool>) = pattern
        .iter()
        .zip(selected.iter().zip(varying))
        .filter(|(c, _)| !c.is_null())
        .map(|(c, (&s, &v))| (s && v, c.is_varying()))
        .unzip();
    Ok((significance, confusion_metrics(&decisions, &truth)?))
}

/// Runs one replication end to end. Deterministic in `(spec, seed)`.
pub fn run_replication(spec: &StudySpec, index: usize, seed: u64) -> Result<ReplicationResult> {
    let started = Instant::now();
    let wrap = |e: Error| Error::Replication { seed, source: Box::new(e) };
    let SimulatedData { distances, truth, data, .. } = simulate_dataset(spec, seed).map_err(wrap)?;
    let stage_one =
        fit_all_sites(&data, &spec.covariate_names(), &spec.fit, spec.exclusion_threshold).map_err(wrap)?;

    let keep: Vec<usize> = stage_one
        .sites
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_excluded())
        .map(|(i, _)| i)
        .collect();
    let input = SamplerInput::new(&stage_one.included(), distances.submatrix(&keep)).map_err(wrap)?;
    let chain = ChainConfig { seed: derive_seed(seed, 3), ..spec.chain };
    let draws = run_chain(&input, &spec.prior, &chain).map_err(wrap)?;
    let summary = summarize(&draws).map_err(wrap)?;
    let report = decide(&summary, DEFAULT_LAMBDA_THRESHOLD, DEFAULT_C_THRESHOLD);
    let varying = report.varying_flags();
    let (significance, spatial) =
        score_decisions(&spec.coefficient_pattern, &report.selected, &varying).map_err(wrap)?;

    let truth_kept = DMatrix::from_fn(keep.len(), spec.p, |r, k| truth[(keep[r], k)]);
    let mse = average_mse(&summary.beta_mean, &truth_kept).map_err(wrap)?;

    Ok(ReplicationResult {
        index,
        seed,
        significance,
        spatial,
        selected: report.selected.clone(),
        varying,
        lambda_mean: report.lambda_mean.clone(),
        c_mean: report.c_mean.clone(),
        average_mse: mse.iter().copied().collect(),
        censoring_rate: censoring_rate(&data),
        excluded_sites: stage_one.excluded().map(|(s, _)| s.to_string()).collect(),
        acceptance_rate: draws.acceptance.iter().sum::<f64>() / draws.acceptance.len() as f64,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub results: Vec<ReplicationResult>,
    pub failures: Vec<FailedReplication>,
}

/// Runs every replication of a study with `workers` threads. Results are
/// ordered by replication index regardless of scheduling.
pub fn run_study(spec: &StudySpec, master_seed: u64, workers: usize) -> Result<StudyRun> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<std::result::Result<ReplicationResult, FailedReplication>> = pool.install(|| {
        (0..spec.replications)
            .into_par_iter()
            .map(|index| {
                let seed = derive_seed(master_seed, index as u64);
                run_replication(spec, index, seed).map_err(|e| FailedReplication {
                    index,
                    seed,
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(StudyRun { results, failures })
}

/// Mean and sample standard deviation over the replications where a metric
/// is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

fn summarize_metric(values: impl Iterator<Item = Option<f64>>) -> MetricSummary {
    let mut defined = Vec::new();
    let mut n_undefined = 0;
    for v in values {
        match v {
            Some(x) => defined.push(x),
            None => n_undefined += 1,
        }
    }
    let n = defined.len();
    let mean = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
    let sd = match (mean, n) {
        (Some(m), n) if n > 1 => {
            Some((defined.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
        }
        (Some(_), 1) => Some(0.0),
        _ => None,
    };
    MetricSummary { mean, sd, n_defined: n, n_undefined }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub tpr: MetricSummary,
    pub tnr: MetricSummary,
    pub ppv: MetricSummary,
    pub npv: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub coefficient: usize,
    pub truth: String,
    pub selected: usize,
    pub detected_varying: usize,
    pub average_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTables {
    pub replications: usize,
    pub significance: LevelSummary,
    pub spatial: LevelSummary,
    pub coefficients: Vec<CoefficientRow>,
    pub mean_censoring_rate: f64,
}

fn level(results: &[ReplicationResult], pick: impl Fn(&ReplicationResult) -> &OperatingCharacteristics) -> LevelSummary {
    LevelSummary {
        tpr: summarize_metric(results.iter().map(|r| pick(r).tpr)),
        tnr: summarize_metric(results.iter().map(|r| pick(r).tnr)),
        ppv: summarize_metric(results.iter().map(|r| pick(r).ppv)),
        npv: summarize_metric(results.iter().map(|r| pick(r).npv)),
    }
}

pub fn aggregate(results: &[ReplicationResult], pattern: &[CoefficientSpec]) -> Result<AggregateTables> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no replication results to aggregate".into()));
    }
    let r = results.len() as f64;
    let coefficients = pattern
        .iter()
        .enumerate()
        .map(|(k, c)| CoefficientRow {
            coefficient: k + 1,
            truth: c.label().to_string(),
            selected: results.iter().filter(|x| x.selected[k]).count(),
            detected_varying: results.iter().filter(|x| x.varying[k]).count(),
            average_mse: results.iter().map(|x| x.average_mse[k]).sum::<f64>() / r,
        })
        .collect();
    Ok(AggregateTables {
        replications: results.len(),
        significance: level(results, |x| &x.significance),
        spatial: level(results, |x| &x.spatial),
        coefficients,
        mean_censoring_rate: results.iter().map(|x| x.censoring_rate).sum::<f64>() / r,
    })
}

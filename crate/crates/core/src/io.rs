//! On-disk formats: the dataset CSV, versioned JSON documents for every
//! stage artifact, the draws CSV and the metric tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::mcmc::{Draw, PosteriorDraws, PosteriorSummary};
use crate::selection::{OperatingCharacteristics, SelectionReport};
use crate::sim::{AggregateTables, MetricSummary, ReplicationResult, StudySpec};
use crate::survival::{ExclusionReason, FitStatus, PmleEstimate, SiteOutcome, SiteSurvivalData, StageOneFit};

pub const SCHEMA_VERSION: u32 = 1;

pub const STAGE1_KIND: &str = "stage1";
pub const SUMMARY_KIND: &str = "summary";
pub const REPORT_KIND: &str = "report";
pub const TRUTH_KIND: &str = "truth";
pub const MANIFEST_KIND: &str = "manifest";
pub const AGGREGATE_KIND: &str = "aggregate";
pub const REPLICATIONS_KIND: &str = "replications";

/// Writes through a temporary sibling file and renames it into place, so a
/// reader never observes a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    kind: String,
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn to_document<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    let doc = Document { kind: kind.to_string(), schema_version: SCHEMA_VERSION, body };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Parses a document, checking its kind and schema version before the body.
pub fn from_document<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("malformed {kind} document: {e}"),
    })?;
    let expected = format!("{kind} v{SCHEMA_VERSION}");
    let found_kind = value.get("kind").and_then(|v| v.as_str()).unwrap_or("<missing kind>");
    let found_version = value.get("schema_version").and_then(|v| v.as_u64());
    if found_kind != kind || found_version != Some(u64::from(SCHEMA_VERSION)) {
        let version = found_version.map_or("<missing version>".to_string(), |v| format!("v{v}"));
        return Err(Error::Schema { expected, found: format!("{found_kind} {version}") });
    }
    let doc: Document<T> = serde_json::from_value(value)
        .map_err(|e| Error::Schema { expected, found: format!("invalid body: {e}") })?;
    Ok(doc.body)
}

pub fn save_document<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    write_atomic(path, to_document(kind, body)?.as_bytes())
}

pub fn load_document<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    from_document(kind, &text)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument(format!("{what}: every row needs {ncols} entries")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

// ---------------------------------------------------------------- dataset

/// A dataset as read from CSV: covariate names and sites in first-appearance
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub sites: Vec<SiteSurvivalData>,
}

impl Dataset {
    pub fn site_ids(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.site_id.clone()).collect()
    }
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

/// Parses `site_id,time,status,x1,...,xp`. Numbers use a decimal point
/// regardless of locale.
pub fn parse_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 4 || fields[..3] != ["site_id", "time", "status"] {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header must be site_id,time,status followed by at least one covariate, found {}",
                fields.join(",")
            ),
        });
    }
    let covariate_names: Vec<String> = fields[3..].iter().map(|s| s.to_string()).collect();
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = covariate_names.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(Error::Parse { line: 1, message: format!("duplicate covariate {dup}") });
    }
    let p = covariate_names.len();

    struct Acc {
        times: Vec<f64>,
        status: Vec<bool>,
        x: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Acc> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse { line: csv_line(&e), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse { line, message };
        let site = record[0].to_string();
        if site.is_empty() {
            return Err(err("empty site_id".into()));
        }
        let time: f64 = record[1].parse().map_err(|_| err(format!("time {:?} is not a number", &record[1])))?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(err(format!("time must be positive and finite, found {time}")));
        }
        let status = match &record[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("status must be 0 or 1, found {other:?}"))),
        };
        let acc = groups.entry(site.clone()).or_insert_with(|| {
            order.push(site.clone());
            Acc { times: Vec::new(), status: Vec::new(), x: Vec::new() }
        });
        acc.times.push(time);
        acc.status.push(status);
        for (k, name) in covariate_names.iter().enumerate() {
            let v: f64 = record[3 + k]
                .parse()
                .map_err(|_| err(format!("{name} = {:?} is not a number", &record[3 + k])))?;
            if !v.is_finite() {
                return Err(err(format!("{name} is not finite")));
            }
            acc.x.push(v);
        }
    }
    if order.is_empty() {
        return Err(Error::Parse { line: 2, message: "dataset has no rows".into() });
    }
    let sites = order
        .into_iter()
        .map(|id| {
            let acc = groups.remove(&id).expect("grouped site");
            let n = acc.times.len();
            let x = DMatrix::from_row_iterator(n, p, acc.x);
            SiteSurvivalData::new(id, acc.times, acc.status, x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { covariate_names, sites })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot open dataset {}: {e}", path.display())))?;
    parse_dataset(f)
}

pub fn dataset_to_csv(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["site_id".to_string(), "time".into(), "status".into()];
    header.extend(dataset.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for site in &dataset.sites {
        for j in 0..site.n_subjects() {
            let mut rec = vec![
                site.site_id.clone(),
                site.times[j].to_string(),
                u8::from(site.status[j]).to_string(),
            ];
            rec.extend(site.covariates.row(j).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_atomic(path, &dataset_to_csv(dataset)?)
}

// ---------------------------------------------------------------- graph

pub fn read_graph(path: &Path) -> Result<SpatialGraph> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read graph {}: {e}", path.display())))?;
    SpatialGraph::parse_edge_list(&text, &[])
}

/// Indices of `site_ids` in `graph`; every site must be a graph node.
pub fn locate_sites(graph: &SpatialGraph, site_ids: &[String]) -> Result<Vec<usize>> {
    site_ids
        .iter()
        .map(|s| {
            graph
                .index_of(s)
                .ok_or_else(|| Error::Graph(format!("site {s} does not appear in the graph")))
        })
        .collect()
}

// ---------------------------------------------------------------- stage one

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Site {
    pub site_id: String,
    pub converged: bool,
    pub status: Option<FitStatus>,
    pub iterations: Option<usize>,
    pub n_events: Option<usize>,
    pub log_pl: Option<f64>,
    pub beta_hat: Option<Vec<f64>>,
    /// Row-major.
    pub v_hat: Option<Vec<Vec<f64>>>,
    pub excluded: bool,
    pub reason: Option<ExclusionReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Document {
    pub covariate_names: Vec<String>,
    pub sites: Vec<Stage1Site>,
}

impl From<&StageOneFit> for Stage1Document {
    fn from(fit: &StageOneFit) -> Self {
        let sites = fit
            .sites
            .iter()
            .map(|s| {
                let e = s.estimate.as_ref();
                Stage1Site {
                    site_id: s.site_id.clone(),
                    converged: e.is_some_and(PmleEstimate::converged),
                    status: e.map(|e| e.status),
                    iterations: e.map(|e| e.iterations),
                    n_events: e.map(|e| e.n_events),
                    log_pl: e.map(|e| e.log_pl),
                    beta_hat: e.map(|e| e.beta_hat.iter().copied().collect()),
                    v_hat: e.map(|e| rows(&e.v_hat)),
                    excluded: s.is_excluded(),
                    reason: s.exclusion.clone(),
                }
            })
            .collect();
        Self { covariate_names: fit.covariate_names.clone(), sites }
    }
}

impl Stage1Document {
    pub fn into_fit(self) -> Result<StageOneFit> {
        let p = self.covariate_names.len();
        let sites = self
            .sites
            .into_iter()
            .map(|s| {
                if s.excluded != s.reason.is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "site {}: excluded flag disagrees with reason",
                        s.site_id
                    )));
                }
                let estimate = match (s.status, s.beta_hat, s.v_hat) {
                    (Some(status), Some(b), Some(v)) => {
                        if b.len() != p || v.len() != p {
                            return Err(Error::InvalidArgument(format!(
                                "site {}: estimate does not have {p} coefficients",
                                s.site_id
                            )));
                        }
                        Some(PmleEstimate {
                            site_id: s.site_id.clone(),
                            beta_hat: DVector::from_vec(b),
                            v_hat: from_rows(&v, p, "v_hat")?,
                            status,
                            iterations: s.iterations.unwrap_or(0),
                            n_events: s.n_events.unwrap_or(0),
                            log_pl: s.log_pl.unwrap_or(f64::NAN),
                        })
                    }
                    (None, None, None) if s.excluded => None,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "site {}: incomplete estimate",
                            s.site_id
                        )))
                    }
                };
                Ok(SiteOutcome { site_id: s.site_id, estimate, exclusion: s.reason })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StageOneFit { covariate_names: self.covariate_names, sites })
    }
}

pub fn save_stage1(path: &Path, fit: &StageOneFit) -> Result<()> {
    save_document(path, STAGE1_KIND, &Stage1Document::from(fit))
}

pub fn load_stage1(path: &Path) -> Result<StageOneFit> {
    load_document::<Stage1Document>(path, STAGE1_KIND)?.into_fit()
}

// ---------------------------------------------------------------- draws

/// Column order: `chain`, `iteration`, `tau`, `lambda[k]`, `c[k]`, then
/// `beta[site,k]` site-major. `k` is 1-based.
pub fn draws_header(site_ids: &[String], p: usize) -> Vec<String> {
    let mut h = vec!["chain".to_string(), "iteration".into(), "tau".into()];
    h.extend((1..=p).map(|k| format!("lambda[{k}]")));
    h.extend((1..=p).map(|k| format!("c[{k}]")));
    for s in site_ids {
        h.extend((1..=p).map(|k| format!("beta[{s},{k}]")));
    }
    h
}

pub fn draws_to_csv(draws: &PosteriorDraws) -> Result<Vec<u8>> {
    let p = draws.n_coefficients;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(draws_header(&draws.site_ids, p))?;
    for (chain, ds) in draws.chains.iter().enumerate() {
        for d in ds {
            let mut rec = vec![chain.to_string(), d.iteration.to_string(), d.tau.to_string()];
            rec.extend(d.lambda.iter().map(f64::to_string));
            rec.extend(d.c.iter().map(|&c| u8::from(c).to_string()));
            for i in 0..d.beta.nrows() {
                rec.extend(d.beta.row(i).iter().map(f64::to_string));
            }
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    write_atomic(path, &draws_to_csv(draws)?)
}

/// Reads a draws file. Acceptance rates are not part of the file and come
/// back empty.
pub fn parse_draws<R: Read>(reader: R) -> Result<PosteriorDraws> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let bad_header = || Error::Parse { line: 1, message: "not a draws header".into() };
    if header.len() < 3 || header[..3] != ["chain", "iteration", "tau"] {
        return Err(bad_header());
    }
    let p = header.iter().filter(|h| h.starts_with("lambda[")).count();
    let beta_cols = header.len() - 3 - 2 * p;
    if p == 0 || !beta_cols.is_multiple_of(p) {
        return Err(bad_header());
    }
    let n = beta_cols / p;
    let site_ids: Vec<String> = (0..n)
        .map(|i| {
            let h = &header[3 + 2 * p + i * p];
            h.strip_prefix("beta[")
                .and_then(|r| r.strip_suffix(",1]"))
                .map(str::to_string)
                .ok_or_else(bad_header)
        })
        .collect::<Result<_>>()?;
    if header != draws_header(&site_ids, p) {
        return Err(bad_header());
    }

    let mut chains: Vec<Vec<Draw>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse { line: csv_line(&e), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |j: usize| -> Result<f64> {
            record[j].parse().map_err(|_| Error::Parse { line, message: format!("bad number {:?}", &record[j]) })
        };
        let int = |j: usize| -> Result<usize> {
            record[j].parse().map_err(|_| Error::Parse { line, message: format!("bad integer {:?}", &record[j]) })
        };
        let chain = int(0)?;
        if chain > chains.len() {
            return Err(Error::Parse { line, message: "chains out of order".into() });
        }
        if chain == chains.len() {
            chains.push(Vec::new());
        }
        let lambda = DVector::from_iterator(p, (0..p).map(|k| num(3 + k)).collect::<Result<Vec<_>>>()?);
        let c = (0..p)
            .map(|k| match &record[3 + p + k] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse { line, message: format!("indicator {other:?}") }),
            })
            .collect::<Result<Vec<_>>>()?;
        let beta_vals = (0..n * p).map(|j| num(3 + 2 * p + j)).collect::<Result<Vec<_>>>()?;
        chains[chain].push(Draw {
            iteration: int(1)?,
            beta: DMatrix::from_row_slice(n, p, &beta_vals),
            lambda,
            c,
            tau: num(2)?,
        });
    }
    Ok(PosteriorDraws { site_ids, n_coefficients: p, chains, acceptance: Vec::new() })
}

pub fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    parse_draws(fs::File::open(path)?)
}

// ---------------------------------------------------------------- summary

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssEntry {
    pub parameter: String,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub site_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub n_draws: usize,
    pub tau_mean: f64,
    pub lambda_mean: Vec<f64>,
    pub c_mean: Vec<f64>,
    /// Rows are sites, columns are coefficients.
    pub beta_mean: Vec<Vec<f64>>,
    pub beta_q025: Vec<Vec<f64>>,
    pub beta_q50: Vec<Vec<f64>>,
    pub beta_q975: Vec<Vec<f64>>,
    pub ess: Vec<EssEntry>,
    pub acceptance_rate: Vec<f64>,
}

impl SummaryDocument {
    pub fn new(summary: &PosteriorSummary, covariate_names: &[String], acceptance_rate: &[f64]) -> Self {
        Self {
            site_ids: summary.site_ids.clone(),
            covariate_names: covariate_names.to_vec(),
            n_draws: summary.n_draws,
            tau_mean: summary.tau_mean,
            lambda_mean: summary.lambda_mean.iter().copied().collect(),
            c_mean: summary.c_mean.iter().copied().collect(),
            beta_mean: rows(&summary.beta_mean),
            beta_q025: rows(&summary.beta_q025),
            beta_q50: rows(&summary.beta_q50),
            beta_q975: rows(&summary.beta_q975),
            ess: summary.ess.iter().map(|(parameter, ess)| EssEntry { parameter: parameter.clone(), ess: *ess }).collect(),
            acceptance_rate: acceptance_rate.to_vec(),
        }
    }

    pub fn to_summary(&self) -> Result<PosteriorSummary> {
        let p = self.covariate_names.len();
        if self.lambda_mean.len() != p || self.c_mean.len() != p || self.beta_mean.len() != self.site_ids.len() {
            return Err(Error::InvalidArgument("summary dimensions disagree".into()));
        }
        Ok(PosteriorSummary {
            site_ids: self.site_ids.clone(),
            n_draws: self.n_draws,
            beta_mean: from_rows(&self.beta_mean, p, "beta_mean")?,
            beta_q025: from_rows(&self.beta_q025, p, "beta_q025")?,
            beta_q50: from_rows(&self.beta_q50, p, "beta_q50")?,
            beta_q975: from_rows(&self.beta_q975, p, "beta_q975")?,
            lambda_mean: DVector::from_vec(self.lambda_mean.clone()),
            c_mean: DVector::from_vec(self.c_mean.clone()),
            tau_mean: self.tau_mean,
            ess: self.ess.iter().map(|e| (e.parameter.clone(), e.ess)).collect(),
        })
    }
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorDecision {
    pub name: String,
    pub lambda_mean: f64,
    pub selected: bool,
    pub c_mean: f64,
    /// Absent for predictors that were not selected.
    pub spatially_varying: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub lambda_threshold: f64,
    pub c_threshold: f64,
    pub predictors: Vec<PredictorDecision>,
}

impl ReportDocument {
    pub fn new(report: &SelectionReport, names: &[String], lambda_threshold: f64, c_threshold: f64) -> Self {
        let predictors = names
            .iter()
            .enumerate()
            .map(|(k, name)| PredictorDecision {
                name: name.clone(),
                lambda_mean: report.lambda_mean[k],
                selected: report.selected[k],
                c_mean: report.c_mean[k],
                spatially_varying: report.spatially_varying[k],
            })
            .collect();
        Self { lambda_threshold, c_threshold, predictors }
    }

    pub fn to_report(&self) -> SelectionReport {
        SelectionReport {
            selected: self.predictors.iter().map(|d| d.selected).collect(),
            spatially_varying: self.predictors.iter().map(|d| d.spatially_varying).collect(),
            lambda_mean: self.predictors.iter().map(|d| d.lambda_mean).collect(),
            c_mean: self.predictors.iter().map(|d| d.c_mean).collect(),
        }
    }
}

// ---------------------------------------------------------------- truth

/// Generating truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub study: StudySpec,
    pub seed: u64,
    pub site_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Rows are sites.
    pub beta: Vec<Vec<f64>>,
}

impl TruthDocument {
    pub fn beta_matrix(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.beta, self.covariate_names.len(), "beta")
    }
}

pub fn truth_rows(beta: &DMatrix<f64>) -> Vec<Vec<f64>> {
    rows(beta)
}

// ---------------------------------------------------------------- tables

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

pub const METRICS_HEADER: [&str; 11] =
    ["replication", "seed", "level", "tp", "tn", "fp", "fn", "tpr", "tnr", "ppv", "npv"];

fn metrics_record(replication: usize, seed: u64, level: &str, m: &OperatingCharacteristics) -> Vec<String> {
    vec![
        replication.to_string(),
        seed.to_string(),
        level.to_string(),
        m.tp.to_string(),
        m.tn.to_string(),
        m.fp.to_string(),
        m.fn_.to_string(),
        opt(m.tpr),
        opt(m.tnr),
        opt(m.ppv),
        opt(m.npv),
    ]
}

/// One row per replication and level. Undefined ratios are written `NaN`.
pub fn metrics_csv<'a>(
    rows: impl IntoIterator<Item = (usize, u64, &'a OperatingCharacteristics, &'a OperatingCharacteristics)>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for (rep, seed, sig, spatial) in rows {
        w.write_record(metrics_record(rep, seed, "significance", sig))?;
        w.write_record(metrics_record(rep, seed, "spatial", spatial))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn replication_metrics_csv(results: &[ReplicationResult]) -> Result<Vec<u8>> {
    metrics_csv(results.iter().map(|r| (r.index, r.seed, &r.significance, &r.spatial)))
}

pub fn aggregate_metrics_csv(t: &AggregateTables) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["level", "metric", "mean", "sd", "n_defined", "n_undefined"])?;
    for (level, s) in [("significance", &t.significance), ("spatial", &t.spatial)] {
        let metrics: [(&str, &MetricSummary); 4] =
            [("tpr", &s.tpr), ("tnr", &s.tnr), ("ppv", &s.ppv), ("npv", &s.npv)];
        for (name, m) in metrics {
            w.write_record([
                level.to_string(),
                name.to_string(),
                opt(m.mean),
                opt(m.sd),
                m.n_defined.to_string(),
                m.n_undefined.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn coefficients_csv(t: &AggregateTables) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["coefficient", "truth", "selected", "detected_varying", "average_mse"])?;
    for c in &t.coefficients {
        w.write_record([
            c.coefficient.to_string(),
            c.truth.clone(),
            c.selected.to_string(),
            c.detected_varying.to_string(),
            c.average_mse.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, enough to repeat the run.
    pub args: Vec<String>,
    pub config_path: Option<String>,
    /// SHA-256 of every input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            args,
            config_path: None,
            input_hashes: BTreeMap::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at_unix: unix_now(),
            finished_at_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        self.input_hashes.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn save(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished_at_unix = unix_now();
        let path = out_dir.join("manifest.json");
        save_document(&path, MANIFEST_KIND, &self)?;
        Ok(path)
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

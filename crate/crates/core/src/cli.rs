//! `svcox` command line. Exit status is 0 on success, 1 for invalid input
//! or usage, and 2 for numerical failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::io::{self, Dataset, ReportDocument, RunManifest, SummaryDocument, TruthDocument};
use crate::mcmc::{run_chain, summarize, ChainConfig, PriorConfig, SamplerInput};
use crate::selection::{decide, DEFAULT_C_THRESHOLD, DEFAULT_LAMBDA_THRESHOLD};
use crate::sim::{self, StudySpec};
use crate::survival::{fit_all_sites, FitOptions, DEFAULT_EXCLUSION_THRESHOLD};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "svcox", version, about = "Bayesian variable selection for Cox models with spatially varying coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the per-site Cox models and write the stage-one document.
    FitSites(FitSitesArgs),
    /// Run the hierarchical sampler on a stage-one document.
    Select(SelectArgs),
    /// Generate one synthetic dataset with its true coefficients.
    Simulate(SimulateArgs),
    /// Run every replication of a study and write aggregate tables.
    Replicate(ReplicateArgs),
    /// Score a selection report against simulation truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct FitSitesArgs {
    /// Dataset CSV with header site_id,time,status,<covariates>.
    #[arg(long)]
    data: PathBuf,
    /// Edge list; every dataset site must be a node.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// JSON with optional `fit` and `exclusion_threshold`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Stage-one document written by `fit-sites`
    #[arg(long)]
    stage1: PathBuf,
    /// Edge list; defaults to the 8x8 lattice.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// JSON with optional `prior`, `chain`, `lambda_threshold`, `c_threshold`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chain length preset: `desk` or `paper`.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the chain seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent chains
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Built-in study name.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Study specification JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; every replication seed is derived from it
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct ReplicateArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Worker threads for replications; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Chains per replication
    #[arg(long)]
    chains: Option<usize>,
    /// Overrides the number of replications in the study.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Report document written by `select`.
    #[arg(long)]
    report: PathBuf,
    /// Truth document written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub fit: FitOptions,
    pub exclusion_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { fit: FitOptions::default(), exclusion_threshold: DEFAULT_EXCLUSION_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub prior: PriorConfig,
    pub chain: ChainConfig,
    pub lambda_threshold: f64,
    pub c_threshold: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            prior: PriorConfig::default(),
            chain: ChainConfig::desk_scale(0),
            lambda_threshold: DEFAULT_LAMBDA_THRESHOLD,
            c_threshold: DEFAULT_C_THRESHOLD,
        }
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::FitSites(a) => fit_sites(a, argv),
        Command::Select(a) => select(a, argv),
        Command::Simulate(a) => simulate(a, argv),
        Command::Replicate(a) => replicate(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("invalid config {}: {e}", path.display())))
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", dir.display())))
}

fn load_graph(path: Option<&Path>, manifest: &mut RunManifest) -> Result<SpatialGraph> {
    match path {
        Some(p) => {
            manifest.record_input(p)?;
            let g = io::read_graph(p)?;
            g.validate()?;
            Ok(g)
        }
        None => Ok(SpatialGraph::lattice(8, 8)),
    }
}

fn fit_sites(a: FitSitesArgs, argv: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("fit-sites", argv, None);
    let config: FitConfig = match &a.config {
        Some(p) => {
            manifest.config_path = Some(p.display().to_string());
            manifest.record_input(p)?;
            read_config(p)?
        }
        None => FitConfig::default(),
    };
    manifest.record_input(&a.data)?;
    let Dataset { covariate_names, sites } = io::read_dataset(&a.data)?;
    if let Some(g) = &a.graph {
        let graph = load_graph(Some(g), &mut manifest)?;
        let ids: Vec<String> = sites.iter().map(|s| s.site_id.clone()).collect();
        io::locate_sites(&graph, &ids)?;
    }
    let fit = fit_all_sites(&sites, &covariate_names, &config.fit, config.exclusion_threshold)?;
    for (site, reason) in fit.excluded() {
        eprintln!("excluded site {site}: {reason}");
    }
    prepare_out_dir(&a.out_dir)?;
    let out = a.out_dir.join("stage1.json");
    io::save_stage1(&out, &fit)?;
    manifest.outputs.push(out.display().to_string());
    manifest.save(&a.out_dir)?;
    Ok(())
}

fn select(a: SelectArgs, argv: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("select", argv, None);
    let mut config: SelectConfig = match &a.config {
        Some(p) => {
            manifest.config_path = Some(p.display().to_string());
            manifest.record_input(p)?;
            read_config(p)?
        }
        None => SelectConfig::default(),
    };
    if let Some(preset) = &a.preset {
        let seed = config.chain.seed;
        config.chain = match preset.as_str() {
            "desk" => ChainConfig::desk_scale(seed),
            "paper" => ChainConfig::paper_scale(seed),
            other => {
                return Err(Error::InvalidArgument(format!("unknown chain preset {other}; use desk or paper")))
            }
        };
    }
    if let Some(seed) = a.seed {
        config.chain.seed = seed;
    }
    if let Some(chains) = a.chains {
        config.chain.n_chains = chains;
    }
    manifest.seed = Some(config.chain.seed);

    manifest.record_input(&a.stage1)?;
    let fit = io::load_stage1(&a.stage1)?;
    let graph = load_graph(a.graph.as_deref(), &mut manifest)?;
    let included = fit.included();
    if included.is_empty() {
        return Err(Error::DegenerateData("every site is excluded".into()));
    }
    let ids: Vec<String> = included.iter().map(|e| e.site_id.clone()).collect();
    let locations = io::locate_sites(&graph, &ids)?;
    let distances = graph.distance_matrix()?.submatrix(&locations);
    let input = SamplerInput::new(&included, distances)?;

    let draws = run_chain(&input, &config.prior, &config.chain)?;
    let summary = summarize(&draws)?;
    let report = decide(&summary, config.lambda_threshold, config.c_threshold);

    prepare_out_dir(&a.out_dir)?;
    let paths = [
        a.out_dir.join("draws.csv"),
        a.out_dir.join("summary.json"),
        a.out_dir.join("report.json"),
    ];
    io::write_draws(&paths[0], &draws)?;
    io::save_document(
        &paths[1],
        io::SUMMARY_KIND,
        &SummaryDocument::new(&summary, &fit.covariate_names, &draws.acceptance),
    )?;
    io::save_document(
        &paths[2],
        io::REPORT_KIND,
        &ReportDocument::new(&report, &fit.covariate_names, config.lambda_threshold, config.c_threshold),
    )?;
    manifest.outputs.extend(paths.iter().map(|p| p.display().to_string()));
    manifest.save(&a.out_dir)?;
    Ok(())
}

fn load_study(a: &StudyArgs, manifest: &mut RunManifest) -> Result<StudySpec> {
    let spec = match (&a.preset, &a.config) {
        (Some(name), None) => StudySpec::preset(name)?,
        (None, Some(path)) => {
            manifest.config_path = Some(path.display().to_string());
            manifest.record_input(path)?;
            read_config(path)?
        }
        _ => return Err(Error::InvalidArgument("give exactly one of --preset or --config".into())),
    };
    spec.validate()?;
    Ok(spec)
}

fn simulate(a: SimulateArgs, argv: Vec<String>) -> Result<()> {
    let a = a.study;
    let mut manifest = RunManifest::new("simulate", argv, Some(a.seed));
    let spec = load_study(&a, &mut manifest)?;
    let sim = sim::simulate_dataset(&spec, a.seed)?;
    let dataset = Dataset { covariate_names: spec.covariate_names(), sites: sim.data };
    let truth = TruthDocument {
        seed: a.seed,
        site_ids: sim.graph.site_ids().to_vec(),
        covariate_names: spec.covariate_names(),
        beta: io::truth_rows(&sim.truth),
        study: spec,
    };
    prepare_out_dir(&a.out_dir)?;
    let paths = [a.out_dir.join("dataset.csv"), a.out_dir.join("truth.json"), a.out_dir.join("graph.txt")];
    io::write_dataset(&paths[0], &dataset)?;
    io::save_document(&paths[1], io::TRUTH_KIND, &truth)?;
    io::write_atomic(&paths[2], sim.graph.to_edge_list().as_bytes())?;
    manifest.outputs.extend(paths.iter().map(|p| p.display().to_string()));
    manifest.save(&a.out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct ReplicationsBody<'a> {
    study: &'a StudySpec,
    master_seed: u64,
    results: &'a [sim::ReplicationResult],
    failures: &'a [sim::FailedReplication],
}

#[derive(Serialize)]
struct AggregateBody<'a> {
    study: &'a str,
    master_seed: u64,
    failed_replications: usize,
    #[serde(flatten)]
    tables: &'a sim::AggregateTables,
}

fn replicate(a: ReplicateArgs, argv: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("replicate", argv, Some(a.study.seed));
    let mut spec = load_study(&a.study, &mut manifest)?;
    if let Some(c) = a.chains {
        spec.chain.n_chains = c;
    }
    if let Some(r) = a.replications {
        spec.replications = r;
    }
    spec.validate()?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let run = sim::run_study(&spec, a.study.seed, workers)?;
    for f in &run.failures {
        eprintln!("replication {} (seed {}) failed: {}", f.index, f.seed, f.error);
    }
    if run.results.is_empty() {
        return Err(Error::Replication {
            seed: a.study.seed,
            source: Box::new(Error::Numerical("every replication failed".into())),
        });
    }
    let tables = sim::aggregate(&run.results, &spec.coefficient_pattern)?;

    let out = &a.study.out_dir;
    prepare_out_dir(out)?;
    let metrics = out.join("metrics.csv");
    let aggregate_csv = out.join("aggregate_metrics.csv");
    let coefficients = out.join("coefficients.csv");
    let aggregate_json = out.join("aggregate.json");
    let replications = out.join("replications.json");
    let timings = out.join("timings.csv");
    io::write_atomic(&metrics, &io::replication_metrics_csv(&run.results)?)?;
    io::write_atomic(&aggregate_csv, &io::aggregate_metrics_csv(&tables)?)?;
    io::write_atomic(&coefficients, &io::coefficients_csv(&tables)?)?;
    io::save_document(
        &aggregate_json,
        io::AGGREGATE_KIND,
        &AggregateBody {
            study: &spec.name,
            master_seed: a.study.seed,
            failed_replications: run.failures.len(),
            tables: &tables,
        },
    )?;
    io::save_document(
        &replications,
        io::REPLICATIONS_KIND,
        &ReplicationsBody {
            study: &spec,
            master_seed: a.study.seed,
            results: &run.results,
            failures: &run.failures,
        },
    )?;
    let mut t = String::from("replication,seed,wall_time_secs\n");
    for r in &run.results {
        t.push_str(&format!("{},{},{}\n", r.index, r.seed, r.wall_time_secs));
    }
    io::write_atomic(&timings, t.as_bytes())?;
    manifest.outputs.extend(
        [&metrics, &aggregate_csv, &coefficients, &aggregate_json, &replications, &timings]
            .iter()
            .map(|p| p.display().to_string()),
    );
    manifest.save(out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluationBody {
    significance: crate::selection::OperatingCharacteristics,
    spatial: crate::selection::OperatingCharacteristics,
}

fn evaluate(a: EvaluateArgs, argv: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("evaluate", argv, None);
    manifest.record_input(&a.report)?;
    manifest.record_input(&a.truth)?;
    let report: ReportDocument = io::load_document(&a.report, io::REPORT_KIND)?;
    let truth: TruthDocument = io::load_document(&a.truth, io::TRUTH_KIND)?;
    let names: Vec<&str> = report.predictors.iter().map(|d| d.name.as_str()).collect();
    if names != truth.covariate_names.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument("report and truth list different predictors".into()));
    }
    let r = report.to_report();
    let (significance, spatial) =
        sim::score_decisions(&truth.study.coefficient_pattern, &r.selected, &r.varying_flags())?;

    prepare_out_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join("metrics.csv");
    let json_path = a.out_dir.join("metrics.json");
    io::write_atomic(&csv_path, &io::metrics_csv([(0, truth.seed, &significance, &spatial)])?)?;
    io::save_document(&json_path, "metrics", &EvaluationBody { significance, spatial })?;
    manifest.outputs.extend([csv_path.display().to_string(), json_path.display().to_string()]);
    manifest.save(&a.out_dir)?;
    Ok(())
}

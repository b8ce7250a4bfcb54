mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svcox::graph::SpatialGraph;
use svcox::io::{self, Dataset, ReportDocument, SummaryDocument, TruthDocument};
use svcox::mcmc::{ChainConfig, PriorConfig};
use svcox::sim::{CoefficientSpec, GraphSpec, StudySpec};
use svcox::survival::{fit_all_sites, FitOptions};

fn svcox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svcox")).args(args).output().expect("binary runs")
}

fn small_study() -> StudySpec {
    StudySpec {
        name: "small".into(),
        n_sites: 9,
        p: 3,
        per_site_n: 80,
        baseline_hazard: 0.5,
        censor_time: 155.0,
        coefficient_pattern: vec![
            CoefficientSpec::Null,
            CoefficientSpec::Static { value: 1.0 },
            CoefficientSpec::Varying { mean: 1.0, decay: 1.0 },
        ],
        graph: GraphSpec::Lattice { rows: 3, cols: 3 },
        prior: PriorConfig::default(),
        replications: 2,
        chain: ChainConfig { n_iter: 400, burn_in: 200, thin: 2, seed: 0, n_chains: 1, mh_step: 0.3 },
        fit: FitOptions::default(),
        exclusion_threshold: 100.0,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn two_stage_pipeline_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let study = d.join("study.json");
    write_json(&study, &small_study());

    let sim_dir = d.join("sim");
    let out = svcox(&["simulate", "--config", p(&study), "--seed", "3", "--out-dir", p(&sim_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["dataset.csv", "truth.json", "graph.txt", "manifest.json"] {
        assert!(sim_dir.join(f).exists(), "{f}");
    }

    let fit_dir = d.join("fit");
    let dataset_before = fs::read(sim_dir.join("dataset.csv")).unwrap();
    let out = svcox(&[
        "fit-sites",
        "--data",
        p(&sim_dir.join("dataset.csv")),
        "--graph",
        p(&sim_dir.join("graph.txt")),
        "--out-dir",
        p(&fit_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(sim_dir.join("dataset.csv")).unwrap(), dataset_before);

    let sel_dir = d.join("select");
    let select_config = d.join("select.json");
    fs::write(&select_config, r#"{"chain": {"n_iter": 600, "burn_in": 300, "thin": 3, "seed": 0, "n_chains": 1, "mh_step": 0.3}}"#).unwrap();
    let run_select = |out_dir: &Path| {
        svcox(&[
            "select",
            "--stage1",
            p(&fit_dir.join("stage1.json")),
            "--graph",
            p(&sim_dir.join("graph.txt")),
            "--config",
            p(&select_config),
            "--seed",
            "11",
            "--chains",
            "2",
            "--out-dir",
            p(out_dir),
        ])
    };
    let out = run_select(&sel_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let draws = io::read_draws(&sel_dir.join("draws.csv")).unwrap();
    assert_eq!(draws.chains.len(), 2);
    assert_eq!(draws.n_draws(), 200);
    let summary: SummaryDocument = io::load_document(&sel_dir.join("summary.json"), io::SUMMARY_KIND).unwrap();
    assert_eq!(summary.n_draws, 200);
    assert_eq!(summary.lambda_mean.len(), 3);
    let report: ReportDocument = io::load_document(&sel_dir.join("report.json"), io::REPORT_KIND).unwrap();
    let names: Vec<&str> = report.predictors.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["x1", "x2", "x3"]);
    assert!(report.predictors.iter().all(|r| r.selected || r.spatially_varying.is_none()));

    let manifest: io::RunManifest = io::load_document(&sel_dir.join("manifest.json"), io::MANIFEST_KIND).unwrap();
    assert_eq!(manifest.seed, Some(11));
    assert_eq!(manifest.input_hashes.len(), 3);
    assert!(manifest.args.iter().any(|a| a == "--chains"));

    // same seed, same draws
    let again = d.join("select2");
    assert!(run_select(&again).status.success());
    assert_eq!(fs::read(sel_dir.join("draws.csv")).unwrap(), fs::read(again.join("draws.csv")).unwrap());

    let eval_dir = d.join("eval");
    let out = svcox(&[
        "evaluate",
        "--report",
        p(&sel_dir.join("report.json")),
        "--truth",
        p(&sim_dir.join("truth.json")),
        "--out-dir",
        p(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",significance,") && lines[2].contains(",spatial,"));
}

#[test]
fn replicate_small_study_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study.json");
    write_json(&study, &small_study());
    let run = |workers: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = svcox(&[
            "replicate", "--config", p(&study), "--seed", "7", "--workers", workers, "--out-dir", p(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("1", "a");
    let b = run("2", "b");
    for f in ["aggregate_metrics.csv", "coefficients.csv", "metrics.csv", "aggregate.json", "replications.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let out = svcox(&["select"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--stage1"));

    let out = svcox(&["fit-sites", "--data", "x.csv", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = svcox(&["select", "--stage1", "/nonexistent/stage1.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage1.json"));

    let out = svcox(&["replicate", "--preset", "study7", "--out-dir", "/tmp"]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(svcox(&["--version"]).status.code(), Some(0));
}

#[test]
fn truncated_stage_one_document_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let sites: Vec<_> = (0..4)
        .map(|i| {
            let mut s = common::random_site(&mut rng, 30, 2);
            s.site_id = format!("r0c{i}");
            s
        })
        .collect();
    let fit = fit_all_sites(&sites, &["a".into(), "b".into()], &FitOptions::default(), 100.0).unwrap();
    let path = dir.path().join("stage1.json");
    io::save_stage1(&path, &fit).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() * 2 / 3]).unwrap();
    let out = svcox(&["select", "--stage1", p(&path), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
}

#[test]
fn non_invertible_covariance_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let sites: Vec<_> = (0..4)
        .map(|i| {
            let mut s = common::random_site(&mut rng, 40, 1);
            s.site_id = format!("r0c{i}");
            s
        })
        .collect();
    let mut fit = fit_all_sites(&sites, &["a".into()], &FitOptions::default(), 100.0).unwrap();
    fit.sites[2].estimate.as_mut().unwrap().v_hat[(0, 0)] = -1.0;
    fit.sites[2].exclusion = None;
    let path = dir.path().join("stage1.json");
    io::save_stage1(&path, &fit).unwrap();
    let graph = dir.path().join("g.txt");
    fs::write(&graph, "r0c0 r0c1\nr0c1 r0c2\nr0c2 r0c3\n").unwrap();
    let out = svcox(&["select", "--stage1", p(&path), "--graph", p(&graph), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pathological_site_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("site_id,time,status,x1\n");
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for site in ["a", "b"] {
        for _ in 0..40 {
            let t: f64 = rand::Rng::random_range(&mut rng, 0.1..5.0);
            csv.push_str(&format!("{site},{t},1,{}\n", common::normal(&mut rng)));
        }
    }
    for j in 0..5 {
        csv.push_str(&format!("cameron,{},0,{}\n", j + 1, j));
    }
    let data = dir.path().join("d.csv");
    fs::write(&data, csv).unwrap();
    let out = svcox(&["fit-sites", "--data", p(&data), "--out-dir", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = io::load_stage1(&dir.path().join("stage1.json")).unwrap();
    let excluded: Vec<&str> = fit.excluded().map(|(s, _)| s).collect();
    assert_eq!(excluded, ["cameron"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cameron"));
}

#[test]
fn dataset_site_missing_from_graph_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "site_id,time,status,x1\na,1,1,0\na,2,1,1\na,3,0,0\nz,1,1,1\nz,2,1,0\n").unwrap();
    let graph = dir.path().join("g.txt");
    fs::write(&graph, "a b\n").unwrap();
    let out = svcox(&["fit-sites", "--data", p(&data), "--graph", p(&graph), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("site z"));
}

#[test]
fn stage_one_round_trip_is_exact_on_sixty_four_sites() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let g = SpatialGraph::lattice(8, 8);
    let sites: Vec<_> = g
        .site_ids()
        .iter()
        .map(|id| {
            let mut s = common::random_site(&mut rng, 40, 3);
            s.site_id = id.clone();
            s
        })
        .collect();
    let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
    let fit = fit_all_sites(&sites, &names, &FitOptions::default(), 100.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    io::save_stage1(&path, &fit).unwrap();
    assert_eq!(io::load_stage1(&path).unwrap(), fit);
}

#[test]
fn seer_style_covariates_parse() {
    let header = "site_id,time,status,age,sex,married,race,stage,grade,surgery,radiation";
    let rows = ["Orleans,12.5,1,67,1,0,1,1,0,1,0", "Caddo,40,0,55,0,1,0,0,1,1,1", "Orleans,3,1,80,0,0,0,1,1,0,0"];
    let text = format!("{header}\n{}\n", rows.join("\n"));
    let Dataset { covariate_names, sites } = io::parse_dataset(text.as_bytes()).unwrap();
    assert_eq!(covariate_names.len(), 8);
    assert_eq!(covariate_names[7], "radiation");
    assert_eq!(sites.len(), 2);
    assert_eq!(sites[0].n_subjects(), 2);
}

#[test]
fn truth_document_round_trip() {
    let spec = small_study();
    let sim = svcox::sim::simulate_dataset(&spec, 5).unwrap();
    let doc = TruthDocument {
        study: spec.clone(),
        seed: 5,
        site_ids: sim.graph.site_ids().to_vec(),
        covariate_names: spec.covariate_names(),
        beta: io::truth_rows(&sim.truth),
    };
    let text = io::to_document(io::TRUTH_KIND, &doc).unwrap();
    let back: TruthDocument = io::from_document(io::TRUTH_KIND, &text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.beta_matrix().unwrap(), sim.truth);
}

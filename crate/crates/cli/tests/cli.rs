use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use contract_cli::bundled;
use contract_cli::{parse_document, run, CliError, Command, Invocation, Overrides};
use contract_core::model::Scenario;
use contract_core::optimizer::{verify_solution, ConstraintReport, SolveResult, VerifyTolerances};
use contract_core::quadrature::gauss_hermite_1d;

/// Small enough for a debug-profile test to finish in a few seconds.
const CHEAP: &str = r#"
name = "cheap"
principal = { kind = "risk-neutral" }

[value]
kind = "RB"

[[agents]]
utility = { kind = "risk-averse", risk_coeff = 2.0 }

[[agents.types]]
kappa = 1.5
cost_coeff = 0.4
sigma = 0.1

[annealer]
stages = 8
particle_count = 24
mcmc_steps_per_stage = 1
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("problem.toml");
    fs::write(&path, text).unwrap();
    path
}

fn invocation(command: Command, config: Option<PathBuf>, out: PathBuf) -> Invocation {
    Invocation {
        command,
        config,
        out,
        overrides: Overrides::default(),
    }
}

#[test]
fn minimal_document_is_single_agent_moral_hazard() {
    let doc = parse_document(CHEAP, Path::new("cheap.toml")).unwrap();
    let p = doc.problem.unwrap();
    assert_eq!(p.agent_count(), 1);
    assert_eq!(p.agents[0].type_count(), 1);
    assert_eq!(p.scenario, Scenario::TypeIndependent);
    assert_eq!(p.agents[0].types[0].prior_prob, 1.0);
}

#[test]
fn two_equally_likely_types_default_to_type_dependent() {
    let src = CHEAP.replace(
        "sigma = 0.1\n",
        "sigma = 0.1\nprior_prob = 0.5\n\n[[agents.types]]\nkappa = 1.5\ncost_coeff = 0.1\nsigma = 0.1\nprior_prob = 0.5\n",
    );
    let p = parse_document(&src, Path::new("two.toml")).unwrap().problem.unwrap();
    assert_eq!(p.agents[0].type_count(), 2);
    assert_eq!(p.scenario, Scenario::TypeDependent);
    p.validate().unwrap();
}

#[test]
fn prior_that_does_not_sum_to_one_reports_its_line() {
    let src = CHEAP.replace(
        "sigma = 0.1\n",
        "sigma = 0.1\nprior_prob = 0.5\n\n[[agents.types]]\nkappa = 1.5\ncost_coeff = 0.1\nsigma = 0.1\nprior_prob = 0.4\n",
    );
    let expected = src
        .lines()
        .position(|l| l.starts_with("prior_prob = 0.5"))
        .unwrap()
        + 1;
    match parse_document(&src, Path::new("bad.toml")) {
        Err(CliError::Document { line, message, .. }) => {
            assert_eq!(line, Some(expected), "{message}");
            assert!(message.contains("0.9"), "{message}");
        }
        other => panic!("expected a document error, got {other:?}"),
    }
}

#[test]
fn unknown_field_reports_its_line() {
    let src = CHEAP.replace("kappa = 1.5", "kappa = 1.5\ncappa = 2.0");
    match parse_document(&src, Path::new("typo.toml")) {
        Err(CliError::Document { line, .. }) => {
            let expected = src.lines().position(|l| l.starts_with("cappa")).unwrap() + 1;
            assert_eq!(line, Some(expected));
        }
        other => panic!("expected a document error, got {other:?}"),
    }
}

#[test]
fn every_bundled_document_parses() {
    for (name, text) in bundled::ALL {
        parse_document(text, Path::new(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn too_few_exceedance_samples_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHEAP);
    let mut inv = invocation(Command::Exceedance, Some(config), dir.path().join("out"));
    inv.overrides.samples = Some(10);
    match run(&inv) {
        Err(e @ CliError::Usage(_)) => assert_eq!(e.to_document().kind, "usage"),
        other => panic!("expected a usage error, got {other:?}"),
    }
}

#[test]
fn unknown_strategy_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHEAP);
    let mut inv = invocation(Command::Solve, Some(config), dir.path().join("out"));
    inv.overrides.optimizer = Some("genetic".into());
    let err = run(&inv).unwrap_err();
    assert!(err.to_string().contains("genetic"), "{err}");
    assert!(err.to_string().contains("smc"), "{err}");
}

#[test]
fn persisted_solution_reverifies_without_drift() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHEAP);
    let out = dir.path().join("out");
    let outcome = run(&invocation(Command::Solve, Some(config.clone()), out.clone())).unwrap();
    assert!(outcome.audits_passed);

    let result: SolveResult =
        serde_json::from_str(&fs::read_to_string(out.join("solve_result.json")).unwrap()).unwrap();
    let saved: ConstraintReport =
        serde_json::from_str(&fs::read_to_string(out.join("verification.json")).unwrap()).unwrap();
    let doc = parse_document(&fs::read_to_string(&config).unwrap(), &config).unwrap();
    let problem = doc.problem.unwrap();
    let rule = gauss_hermite_1d(doc.solver.quadrature_points).unwrap();
    let fresh = verify_solution(&result, &problem, &rule, &VerifyTolerances::default()).unwrap();

    assert_eq!(fresh.feasible, saved.feasible);
    for (a, b) in fresh
        .participation_residuals
        .iter()
        .flatten()
        .zip(saved.participation_residuals.iter().flatten())
    {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn same_config_and_seed_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHEAP);
    let a = run(&invocation(Command::Solve, Some(config.clone()), dir.path().join("a"))).unwrap();
    let b = run(&invocation(Command::Solve, Some(config.clone()), dir.path().join("b"))).unwrap();
    assert_eq!(a.manifest.outputs_sha256, b.manifest.outputs_sha256);
    assert_eq!(a.manifest.config_sha256, b.manifest.config_sha256);

    let mut inv = invocation(Command::Solve, Some(config), dir.path().join("c"));
    inv.overrides.seed = Some(7);
    let c = run(&inv).unwrap();
    assert_ne!(a.manifest.config_sha256, c.manifest.config_sha256);
}

#[test]
fn calibrate_writes_problem_that_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), bundled::CALIBRATIONS[0].1);
    let outcome = run(&invocation(Command::Calibrate, Some(config), out.clone())).unwrap();
    assert!(outcome.audits_passed);
    let text = fs::read_to_string(out.join("problem.toml")).unwrap();
    let p = parse_document(&text, Path::new("problem.toml")).unwrap().problem.unwrap();
    let ty = &p.agents[0].types[0];
    assert!((ty.kappa - 1.596).abs() < 1e-9);
    assert!((ty.sigma - 0.6).abs() < 1e-9);
}

#[test]
fn binary_exit_codes_and_error_document() {
    let bin = env!("CARGO_BIN_EXE_contracts");
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHEAP);

    let ok = Process::new(bin)
        .args(["solve", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("ok"))
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("ok/manifest.json").exists());

    let bad_out = dir.path().join("bad");
    let bad = Process::new(bin)
        .args(["exceedance", "--samples", "10", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&bad_out)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(bad_out.join("error.json")).unwrap()).unwrap();
    assert_eq!(doc["status"], "error");
    assert_eq!(doc["kind"], "usage");

    let bad_doc = write_config(dir.path(), &CHEAP.replace("kappa = 1.5", "kappa = -1.5"));
    let broken = Process::new(bin)
        .args(["solve", "--config"])
        .arg(&bad_doc)
        .arg("--out")
        .arg(dir.path().join("broken"))
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert_eq!(broken.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&broken.stderr).unwrap();
    assert_eq!(err["kind"], "document");
    assert!(err["line"].as_u64().is_some());
}

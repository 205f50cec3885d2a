use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqdp_harness::config::parse_experiment;
use eqdp_harness::experiment::run_sweep;
use eqdp_harness::{run_experiment, ExitStatus, RunReport, SweepConfig};
use serde_json::json;

fn eqdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqdp"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn noiseless_experiment() -> serde_json::Value {
    json!({
        "environment": {"generate": {
            "kind": "tabular", "states": [1, 3], "observations": [1, 4], "actions": 2, "horizon": 3,
            "noise": "deterministic", "emission": "dirac"
        }},
        "algorithm": {"explicit": {"m": 1, "m_prime": 1, "epsilon": 0.5}},
        "seeds": {"start": 0, "count": 8}
    })
}

fn stochastic_experiment() -> serde_json::Value {
    json!({
        "environment": {"generate": {
            "kind": "tabular", "states": 2, "observations": 3, "actions": 2, "horizon": 3, "min_sigma": 0.3
        }},
        "algorithm": {"explicit": {"m": 40, "m_prime": 200, "epsilon": 0.3}},
        "seeds": [4, 1, 9, 2, 7, 3]
    })
}

/// Reports with wall times zeroed.
fn timeless(mut r: RunReport) -> RunReport {
    for s in &mut r.seeds {
        s.wall_ms = 0;
    }
    r
}

#[test]
fn generated_environments_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for path in [&a, &b] {
        let out = eqdp(&[
            "generate-env",
            "--kind",
            "tabular",
            "--S",
            "3",
            "--O",
            "4",
            "--A",
            "2",
            "--H",
            "3",
            "--min-sigma",
            "0.3",
            "--min-gap",
            "0.1",
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
        assert!(text(&out.stdout).contains("all assumptions pass"));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let audit = eqdp(&["audit", "--env", a.to_str().unwrap()]);
    assert_eq!(code(&audit), 0);
}

#[test]
fn undercomplete_violation_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqdp(&[
        "generate-env",
        "--kind",
        "tabular",
        "--S",
        "5",
        "--O",
        "3",
        "--A",
        "2",
        "--H",
        "3",
        "--out",
        dir.path().join("e.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), ExitStatus::Validation.code());
    assert!(text(&out.stderr).contains("undercomplete"));
    assert!(!dir.path().join("e.json").exists());
}

#[test]
fn overcomplete_environment_fails_the_one_step_audit() {
    let dir = tempfile::tempdir().unwrap();
    let env = dir.path().join("oc.json");
    let out = eqdp(&[
        "generate-env",
        "--kind",
        "overcomplete",
        "--S",
        "3",
        "--O",
        "2",
        "--A",
        "2",
        "--H",
        "3",
        "--K",
        "2",
        "--min-sigma",
        "0.3",
        "--seed",
        "1",
        "--out",
        env.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert_eq!(code(&eqdp(&["audit", "--env", env.to_str().unwrap()])), 0);
    let one_step = eqdp(&["audit", "--env", env.to_str().unwrap(), "--depth", "1"]);
    assert_eq!(code(&one_step), ExitStatus::AuditFailed.code());
}

#[test]
fn malformed_config_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"environment\": {\"file\": \"x.json\"},\n  \"algorithm\": {\"auto\": {}},\n  \"sedes\": [1]\n}\n").unwrap();
    let out = eqdp(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), ExitStatus::Validation.code());
    let err = text(&out.stderr);
    assert!(err.contains("line 4") && err.contains("sedes"), "{err}");

    std::fs::write(&path, "{\"seeds\": [1,}").unwrap();
    let out = eqdp(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), ExitStatus::Validation.code());
    assert!(text(&out.stderr).contains("line 1"));
}

#[test]
fn noiseless_run_succeeds_on_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", &noiseless_experiment());
    let out_dir = dir.path().join("out");
    let out = eqdp(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("result.json")).unwrap())
            .unwrap();
    assert_eq!(report.aggregate.successes, 8);
    assert_eq!(report.aggregate.success_rate, 1.0);
    let csv = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,success,episodes,steps,obs_samples,reward_samples,bad_events_total,wall_ms"
    );
    for (line, seed) in lines.zip(&report.seeds) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], seed.seed.to_string());
        assert_eq!(cells[1], "true");
        assert_eq!(cells[3], seed.ledger.steps.to_string());
    }
}

#[test]
fn report_ledgers_match_event_reconstruction() {
    let cfg =
        parse_experiment(&stochastic_experiment().to_string(), Path::new("cfg.json")).unwrap();
    let report = run_experiment(&cfg, 1).unwrap();
    assert!(report.aggregate.ledger_consistent);
    for s in &report.seeds {
        assert!(s.ledger_reconstructed, "seed {}", s.seed);
        assert_eq!(
            s.bad_events_per_level.iter().sum::<usize>(),
            s.bad_events_total
        );
    }
    let successes = report.seeds.iter().filter(|s| s.success).count();
    assert_eq!(
        report.aggregate.success_rate,
        successes as f64 / report.seeds.len() as f64
    );
}

#[test]
fn parallel_and_serial_runs_agree() {
    let cfg =
        parse_experiment(&stochastic_experiment().to_string(), Path::new("cfg.json")).unwrap();
    let serial = timeless(run_experiment(&cfg, 1).unwrap());
    let parallel = timeless(run_experiment(&cfg, 4).unwrap());
    assert_eq!(serial, parallel);
    let order: Vec<u64> = serial.seeds.iter().map(|s| s.seed).collect();
    assert_eq!(order, vec![4, 1, 9, 2, 7, 3]);
}

#[test]
fn single_point_grid_equals_run() {
    let experiment = stochastic_experiment();
    let cfg = parse_experiment(&experiment.to_string(), Path::new("cfg.json")).unwrap();
    let run = run_experiment(&cfg, 1).unwrap();
    let sweep: SweepConfig = serde_json::from_value(json!({
        "experiment": experiment,
        "grid": {"/algorithm/explicit/m": [40]}
    }))
    .unwrap();
    let report = run_sweep(&sweep, Path::new(""), 2).unwrap();
    assert_eq!(report.points.len(), 1);
    assert_eq!(report.points[0].aggregate, run.aggregate);
}

#[test]
fn horizon_sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut experiment = stochastic_experiment();
    experiment["seeds"] = json!([0, 1, 2]);
    let cfg = write(
        dir.path(),
        "sweep.json",
        &json!({"experiment": experiment, "grid": {"/environment/generate/horizon": [3, 6]}}),
    );
    let mut tables = Vec::new();
    for (run, jobs) in ["a", "b"].iter().zip(["1", "3"]) {
        let out_dir = dir.path().join(run);
        let out = eqdp(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
        tables.push(std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let rows: Vec<Vec<&str>> = tables[0].lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let col = rows[0].iter().position(|c| *c == "median_steps").unwrap();
    assert_eq!((rows[1][1], rows[2][1]), ("3", "6"));
    let (short, long): (f64, f64) = (rows[1][col].parse().unwrap(), rows[2][col].parse().unwrap());
    assert!(short > 0.0 && long > short);
}

#[test]
fn unknown_grid_pointer_is_a_validation_error() {
    let sweep: SweepConfig = serde_json::from_value(json!({
        "experiment": stochastic_experiment(),
        "grid": {"/environment/generate/depth": [1]}
    }))
    .unwrap();
    let err = run_sweep(&sweep, Path::new(""), 1).unwrap_err();
    assert_eq!(err.status(), ExitStatus::Validation);
}

#[test]
fn exhausted_budget_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut experiment = noiseless_experiment();
    experiment["algorithm"]["explicit"]["max_bad_events"] = json!(1);
    let cfg = write(dir.path(), "cfg.json", &experiment);
    let out_dir = dir.path().join("out");
    let args = [
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ];
    let out = eqdp(&args);
    assert_eq!(code(&out), ExitStatus::BudgetExhausted.code());
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("result.json")).unwrap())
            .unwrap();
    assert!(report.aggregate.budget_exhausted > 0);
    let warn = eqdp(&[&args[..], &["--warn-on-budget"]].concat());
    assert_eq!(code(&warn), 0);
}

#[test]
fn infeasible_generation_is_reported_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut experiment = stochastic_experiment();
    experiment["environment"]["generate"]["min_sigma"] = json!(0.999);
    experiment["environment"]["generate"]["max_attempts"] = json!(3);
    let cfg = write(dir.path(), "cfg.json", &experiment);
    let out = eqdp(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), ExitStatus::GenerationInfeasible.code());
    assert!(text(&out.stderr).contains("generation infeasible"));
}

use std::path::{Path, PathBuf};
use std::process::Command;

use sgnet_cli::report::{merge_reports, Report, StepStatus};
use sgnet_cli::{execute, parse_scenario, run_file};
use sgnet_core::sgc::{Status, Witness};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

fn sgnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sgnet")).args(args).output().expect("binary runs")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn example55_reproduces_the_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_file(&scenario_path("example55"), Some(dir.path())).unwrap();
    assert_eq!(report.exit_code(), 1);
    let ugas = report.step("ugas").unwrap();
    assert_eq!(ugas.status, StepStatus::Falsified);
    assert!(matches!(ugas.verdicts["ugas"].witness, Some(Witness::GridPoint { lhs, rhs, .. }) if lhs > rhs));
    assert_eq!(ugas.drift.as_ref().unwrap().window, 128);
    assert_eq!(report.step("max-robust-sgc").unwrap().status, StepStatus::NoViolationFound);
    let rows = read_csv(&dir.path().join("iterate_iterates.csv"));
    assert!(rows.iter().any(|r| r == &["3", "8", "0.625"]), "{rows:?}");
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("ugas_norms.csv").exists());
}

#[test]
fn cascade_pipeline_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_file(&scenario_path("cascade"), Some(dir.path())).unwrap();
    assert_eq!(report.exit_code(), 0, "{:#?}", report.steps);
    assert_eq!(report.step("virtual-reduction").unwrap().status, StepStatus::Certified);
    let order: Vec<&str> = report.steps.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(order, ["virtual-reduction", "ugas", "star", "path", "zero-input", "step-input"]);
    let zero = report.step("zero-input").unwrap();
    assert_eq!(zero.verdicts["decay"].status, Status::NoViolationFound);
    assert!(zero.verdicts["decay"].metrics["active"] > 0.0);
    assert!(report.step("step-input").unwrap().verdicts.contains_key("iss"));
    let rows = read_csv(&dir.path().join("zero-input_trajectory_0.csv"));
    let v: Vec<f64> = rows.iter().map(|r| r[51].parse().unwrap()).collect();
    assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn empty_analysis_list_echoes_the_scenario() {
    let s =
        parse_scenario("schema_version = 1\nname = \"empty\"\n[operator]\npreset = \"cascade\"\nwindow = 4\n").unwrap();
    let out = execute(&s).unwrap();
    assert!(out.report.steps.is_empty());
    assert!(out.tables.is_empty());
    assert_eq!(out.report.scenarios, vec![s]);
    assert_eq!(out.report.exit_code(), 0);
}

fn without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn reports_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_file(&scenario_path("twonode"), Some(a.path())).unwrap();
    run_file(&scenario_path("twonode"), Some(b.path())).unwrap();
    assert_eq!(without_timing(&a.path().join("report.json")), without_timing(&b.path().join("report.json")));
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names.iter().filter(|n| n.to_string_lossy().ends_with(".csv")) {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn merging_a_split_pipeline_matches_the_single_run() {
    let full = parse_scenario(&std::fs::read_to_string(scenario_path("twonode")).unwrap()).unwrap();
    let single = execute(&full).unwrap().report;
    let split = full.analyses.iter().position(|a| a.check_name() == "path").unwrap();
    let mut conditions = full.clone();
    conditions.name = "twonode-conditions".into();
    conditions.analyses.truncate(split);
    let mut pipeline = full.clone();
    pipeline.name = "twonode-pipeline".into();
    pipeline.analyses.drain(..split);
    let parts: Vec<Report> = [conditions, pipeline].iter().map(|s| execute(s).unwrap().report).collect();
    let merged = merge_reports(&parts).unwrap();
    let set = |r: &Report| {
        let mut v: Vec<_> = r.steps.iter().map(|s| (s.id.clone(), s.status, s.verdicts.clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    };
    assert_eq!(set(&merged), set(&single));
    assert_eq!(merged.scenarios.len(), 2);
}

#[test]
fn report_merge_command_detects_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    run_file(&scenario_path("twonode"), Some(&a)).unwrap();
    let report_a = a.join("report.json");
    let merged_path = dir.path().join("merged.json");
    let out = sgnet(&[
        "report-merge",
        report_a.to_str().unwrap(),
        report_a.to_str().unwrap(),
        "-o",
        merged_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let merged = Report::load(&merged_path).unwrap();
    assert_eq!(merged.steps.len(), 5);

    let mut tampered = Report::load(&report_a).unwrap();
    tampered.steps[0].status = StepStatus::Falsified;
    let b = dir.path().join("b.json");
    std::fs::write(&b, tampered.to_json().unwrap()).unwrap();
    let out = sgnet(&["report-merge", report_a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sgc-cycles"));
}

#[test]
fn star_prints_the_closure() {
    let out = sgnet(&["star", "--preset", "example55", "--window", "64", "--r", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,index,value"));
    let eighth: f64 = lines.find(|l| l.starts_with("1,8,")).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(eighth >= 0.625);
}

#[test]
fn analyze_reports_the_cycle_slope() {
    let out = sgnet(&["analyze", "--preset", "twonode", "--check", "sgc-cycles"]);
    assert!(out.status.success());
    let step: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(step["status"], "Certified");
    let ratio = step["verdicts"]["sgc-cycles"]["metrics"]["max_cycle_ratio"].as_f64().unwrap();
    assert!((ratio - 0.4).abs() < 1e-12);
}

#[test]
fn analyze_exit_code_follows_the_verdict() {
    let out =
        sgnet(&["analyze", "--preset", "example55", "--window", "64", "--check", "ugas", "--r", "1", "--k-max", "31"]);
    assert_eq!(out.status.code(), Some(1));
    let step: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(step["status"], "Falsified");
    assert_eq!(step["drift"]["window"], 128);
}

#[test]
fn simulate_prints_a_monotone_v_column() {
    let out = Command::new(env!("CARGO_BIN_EXE_sgnet"))
        .args(["simulate", "--preset", "cascade", "--n", "50", "--horizon", "4", "--input", "zero"])
        .env("SGNET_JOBS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let header = r.headers().unwrap().clone();
    let v_col = header.iter().position(|h| h == "V").unwrap();
    assert_eq!(header.len(), 53);
    let v: Vec<f64> = r.records().map(|rec| rec.unwrap()[v_col].parse().unwrap()).collect();
    assert_eq!(v.len(), 401);
    assert!(v.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn usage_errors() {
    let out = sgnet(&["star", "--preset", "ring"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("example55") && err.contains("cascade") && err.contains("twonode"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        "schema_version = 1\nname = \"bad\"\n[operator]\npreset = \"cascade\"\nwindow = \"many\"\n",
    )
    .unwrap();
    let out = sgnet(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`operator`") && err.contains("expected usize"), "{err}");
}

#[test]
fn refused_steps_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("refused.toml");
    std::fs::write(
        &config,
        "schema_version = 1\nname = \"refused\"\noutput_dir = \"out\"\n[operator]\npreset = \"cascade\"\nwindow = 8\n\
         [[analyses]]\ncheck = \"sgc-cycles\"\n",
    )
    .unwrap();
    let out = sgnet(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Refused"));
    let report = Report::load(&dir.path().join("out/report.json")).unwrap();
    assert!(report.steps[0].reason.as_ref().unwrap().contains("explicit"));
}

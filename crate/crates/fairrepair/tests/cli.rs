use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn fx(name: &str) -> String {
    fixture(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairrepair")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The last stderr line of a failed run, parsed.
fn error_report(o: &Output) -> Value {
    let err = stderr(o);
    serde_json::from_str(err.lines().last().expect("stderr is not empty")).unwrap_or_else(|_| panic!("not JSON: {err}"))
}

fn out_dir(tmp: &tempfile::TempDir, name: &str) -> String {
    tmp.path().join(name).display().to_string()
}

#[test]
fn repair_of_the_weighted_bag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "r");
    let o = run(&["repair", "--data", &fx("fig4.csv"), "--ci", &fx("fig4_ci.json"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let artifact = String::from_utf8(o.stdout).unwrap();
    assert_eq!(artifact.trim(), Path::new(&out).join("repaired.csv").display().to_string());
    let report = json(&Path::new(&out).join("repair.json"));
    assert_eq!(report["delta"], 2);
    assert_eq!(report["optimal"], true);
    assert_eq!(report["ci_gap_after"], "0");
    assert_eq!(report["method"], "maxsat");
    assert!(Path::new(&out).join("repaired.domains.json").exists());
    assert!(Path::new(&out).join("run.log.jsonl").exists());
}

#[test]
fn consistent_input_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "r");
    let o = run(&["repair", "--data", &fx("consistent.csv"), "--ci", &fx("fig4_ci.json"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&Path::new(&out).join("repair.json"));
    assert_eq!(report["delta"], 0);
    let written = std::fs::read_to_string(Path::new(&out).join("repaired.csv")).unwrap();
    assert_eq!(written, std::fs::read_to_string(fixture("consistent.csv")).unwrap());
}

#[test]
fn mvd_repair_of_the_four_tuple_relation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "r");
    let o = run(&["repair", "--data", &fx("fig3.csv"), "--mvd", &fx("fig3_mvd.json"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&Path::new(&out).join("repair.json"));
    assert_eq!(report["delta"], 1);
    assert_eq!(report["constraint_kind"], "mvd");
}

#[test]
fn soft_repair_is_flagged_non_optimal() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "r");
    let o = run(&[
        "repair",
        "--data",
        &fx("adult_synth.csv"),
        "--ci",
        &fx("adult_ci.json"),
        "--soft-fraction",
        "--seed",
        "1",
        "--roles",
        &fx("adult_roles.json"),
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&Path::new(&out).join("repair.json"));
    assert_eq!(report["method"], "maxsat-soft");
    assert_eq!(report["optimal"], false);
    assert_eq!(report["budget_exhausted"], false);
    assert_eq!(report["soft_fraction"], 0.1);
    assert!(report["ci_gap_after"].as_str().is_some());
    assert!(report["stats"]["hard_clauses_used"].as_u64().unwrap() < report["stats"]["hard_clauses_total"].as_u64().unwrap());
    let metrics = json(&Path::new(&out).join("metrics.json"));
    assert!(metrics["certificate_before"]["condition_b"]["holds"] == false);
}

#[test]
fn missing_seed_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "repair",
        "--data",
        &fx("fig4.csv"),
        "--ci",
        &fx("fig4_ci.json"),
        "--soft-fraction",
        "0.5",
        "--out",
        &out_dir(&tmp, "r"),
    ]);
    assert_eq!(code(&o), 2);
    let e = error_report(&o);
    assert_eq!(e["error"], "config");
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("seed"));
    assert!(o.stdout.is_empty());
}

#[test]
fn cross_method_parameters_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["repair", "--data", &fx("fig4.csv"), "--ci", &fx("fig4_ci.json"), "--method", "ic", "--budget", "5", "--out", &out_dir(&tmp, "r")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn tiny_budget_exits_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "r");
    let o = run(&[
        "repair",
        "--data",
        &fx("fig4.csv"),
        "--ci",
        &fx("fig4_ci.json"),
        "--budget",
        "1",
        "--solver",
        "branch-and-bound",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let report = json(&Path::new(&out).join("repair.json"));
    assert_eq!(report["budget_exhausted"], true);
    assert_eq!(report["optimal"], false);
    assert!(Path::new(&out).join("repaired.csv").exists());
}

#[test]
fn factorization_methods_report_scale() {
    let tmp = tempfile::tempdir().unwrap();
    for method in ["ic", "nmf"] {
        let out = out_dir(&tmp, method);
        let o = run(&["repair", "--data", &fx("fig4.csv"), "--ci", &fx("fig4_ci.json"), "--method", method, "--out", &out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let report = json(&Path::new(&out).join("repair.json"));
        assert_eq!(report["method"], method);
        assert!(report["scale"].as_u64().unwrap() >= 1);
        assert!(report["factorization"].is_object());
    }
    let o = run(&["repair", "--data", &fx("fig3.csv"), "--mvd", &fx("fig3_mvd.json"), "--method", "ic", "--out", &out_dir(&tmp, "x")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn external_solver_output_is_decoded() {
    let tmp = tempfile::tempdir().unwrap();
    let script = tmp.path().join("solver.sh");
    // Keeps every tuple of the candidate universe: the insertion repair.
    std::fs::write(&script, "#!/bin/sh\necho 'c fake'\necho 's OPTIMUM FOUND'\necho 'v 1 2 3 4 5 0'\n").unwrap();
    let cmd = format!("sh {}", script.display());
    let out = out_dir(&tmp, "r");
    let o = run(&["repair", "--data", &fx("fig3.csv"), "--mvd", &fx("fig3_mvd.json"), "--external-solver", &cmd, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&Path::new(&out).join("repair.json"));
    assert_eq!(report["method"], "maxsat-external");
    assert_eq!(report["delta"], 1);
    assert_eq!(report["inserted"], 1);
    assert!(Path::new(&out).join("lineage.wcnf").exists());

    std::fs::write(&script, "#!/bin/sh\necho 's UNSATISFIABLE'\n").unwrap();
    let o = run(&["repair", "--data", &fx("fig3.csv"), "--mvd", &fx("fig3_mvd.json"), "--external-solver", &cmd, "--out", &out]);
    assert_eq!(code(&o), 1);
    assert_eq!(error_report(&o)["error"], "solver");
}

#[test]
fn audit_of_college_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "a");
    let o = run(&["audit", "--data", &fx("college1.csv"), "--roles", &fx("college1_roles.json"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = json(&Path::new(&out).join("audit.json"));
    let metric = |name: &str| a["metrics"].as_array().unwrap().iter().find(|m| m["name"] == name).unwrap().clone();
    assert_eq!(metric("DP")["value"], "0");
    assert!(metric("TPB")["value"].is_null());
    assert!(metric("TPB")["note"].as_str().unwrap().contains("no prediction column"));
    let stratum = a["rod"]["strata"].as_array().unwrap().iter().find(|s| s["context"][0][1] == "A").unwrap().clone();
    assert_eq!(stratum["delta"], "16");
    let cdp = metric("CDP");
    let da = cdp["strata"].as_array().unwrap().iter().find(|s| s["context"][0][1] == "A").unwrap().clone();
    assert_eq!((da["rate_reference"].as_str(), da["rate_protected"].as_str()), (Some("4/5"), Some("1/5")));
    let notes: Vec<&str> = a["notes"].as_array().unwrap().iter().map(|n| n.as_str().unwrap()).collect();
    assert!(notes.iter().any(|n| n.contains("parity holds overall")));
    assert!(notes.iter().any(|n| n.starts_with("CDP: stratum gaps of opposite sign cancel")));
    assert!(std::fs::read_to_string(Path::new(&out).join("audit.txt")).unwrap().contains("odds ratio by stratum"));
}

#[test]
fn audit_of_college_two_with_and_without_qualification() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "a");
    let o = run(&["audit", "--data", &fx("college2.csv"), "--roles", &fx("college2_roles.json"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = json(&Path::new(&out).join("audit.json"));
    let cdp = a["metrics"].as_array().unwrap().iter().find(|m| m["name"] == "CDP").unwrap().clone();
    assert_ne!(cdp["value"], "0");
    assert!(a["notes"].to_string().contains("check-model"));

    // Controlling for qualification removes every stratum gap.
    let out = out_dir(&tmp, "aq");
    let o = run(&["audit", "--data", &fx("college2.csv"), "--roles", &fx("college2_roles.json"), "--context", "D,Q", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = json(&Path::new(&out).join("audit.json"));
    let cdp = a["metrics"].as_array().unwrap().iter().find(|m| m["name"] == "CDP").unwrap().clone();
    assert_eq!(cdp["value"], "0");
    let strata = cdp["strata"].as_array().unwrap();
    assert!(!strata.is_empty());
    assert!(strata.iter().all(|s| s["gap"] == "0"));
}

#[test]
fn check_model_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "c1");
    let o = run(&["check-model", "--model", &fx("college1_model.json"), "--roles", &fx("college1_model_roles.json"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&Path::new(&out).join("verdict.json"));
    assert_eq!(v["notion"], "justifiable");
    assert_eq!(v["verdict"]["fair"], false);
    assert!(v["verdict"]["witness"].is_object());
    let p = |s: &str| {
        v["interventions"].as_array().unwrap().iter().find(|r| r["context"][0][1] == "A" && r["protected_value"] == s).unwrap()["outcome"][1][1]
            .clone()
    };
    assert_eq!((p("M"), p("F")), (Value::from("4/5"), Value::from("1/5")));

    let out = out_dir(&tmp, "c2");
    let o = run(&[
        "check-model",
        "--model",
        &fx("college2_model.json"),
        "--roles",
        &fx("college2_model_roles.json"),
        "--mode",
        "path-criterion",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&Path::new(&out).join("verdict.json"));
    assert_eq!(v["verdict"]["fair"], true);
    assert_eq!(v["verdict"]["mode"], "path-criterion");

    let out = out_dir(&tmp, "iso");
    let o = run(&["check-model", "--model", &fx("isolated_model.json"), "--roles", &fx("isolated_roles.json"), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&Path::new(&out).join("verdict.json"));
    assert_eq!(v["notion"], "interventional");
    assert_eq!(v["verdict"]["fair"], true);
}

#[test]
fn check_ci_with_tensor_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp, "c");
    let o = run(&["check-ci", "--data", &fx("fig4.csv"), "--ci", &fx("fig4_ci.json"), "--dump-tensor", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&Path::new(&out).join("ci.json"));
    assert_eq!(r["holds"], false);
    assert_eq!(r["saturated"], true);
    assert!(r["tensor"].is_array());
    let o = run(&["check-ci", "--data", &fx("consistent.csv"), "--ci", &fx("fig4_ci.json"), "--out", &out]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&Path::new(&out).join("ci.json"))["holds"], true);
}

#[test]
fn export_wcnf_of_the_four_tuple_relation() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("fig3.wcnf");
    let o = run(&["export-wcnf", "--data", &fx("fig3.csv"), "--mvd", &fx("fig3_mvd.json"), "--out", &path.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('c')).collect();
    assert_eq!(lines[0], "p wcnf 5 9 6");
    assert_eq!(lines[1..].iter().filter(|l| l.starts_with("6 ")).count(), 4);
    assert_eq!(lines[1..].iter().filter(|l| l.starts_with("1 ")).count(), 5);
    assert!(text.contains("c var 4 (b,b,c)"));

    // The exported problem solves to the same optimum as the built-in repair.
    let problem = fairrepair::io::read_wcnf(&path).unwrap();
    let (cost, _) = fairrepair_core::maxsat::solve_exhaustive(&problem).unwrap();
    assert_eq!(cost, 1);
}

#[test]
fn export_of_empty_data_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("empty.csv");
    std::fs::write(&csv, "X,Y,Z\n").unwrap();
    std::fs::write(tmp.path().join("empty.domains.json"), r#"{"X":["a","b"],"Y":["a","b"],"Z":["c","d"]}"#).unwrap();
    let path = tmp.path().join("empty.wcnf");
    let o = run(&["export-wcnf", "--data", &csv.display().to_string(), "--mvd", &fx("fig3_mvd.json"), "--out", &path.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('c')).collect();
    assert_eq!(body, vec!["p wcnf 0 0 1"]);
}

#[test]
fn config_file_runs_a_command() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("fig4.csv"), tmp.path().join("fig4.csv")).unwrap();
    std::fs::copy(fixture("fig4_ci.json"), tmp.path().join("fig4_ci.json")).unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"command":"repair","data":"fig4.csv","ci":"fig4_ci.json","out":"result"}"#).unwrap();
    let o = run(&["--config", &cfg.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&tmp.path().join("result").join("repair.json"))["delta"], 2);

    std::fs::write(&cfg, r#"{"command":"repair","data":"fig4.csv","ci":"fig4_ci.json","out":"result","budjet":5}"#).unwrap();
    let o = run(&["--config", &cfg.display().to_string()]);
    assert_eq!(code(&o), 2);
    assert!(error_report(&o)["message"].as_str().unwrap().contains("budjet"));
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["repair", "--data", "/nonexistent/x.csv", "--ci", &fx("fig4_ci.json"), "--out", &out_dir(&tmp, "r")]);
    assert_eq!(code(&o), 1);
    assert_eq!(error_report(&o)["error"], "io");
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.display().to_string().ends_with(".log.jsonl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn artifacts_are_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for (i, threads) in ["1", "1", "4"].iter().enumerate() {
        let out = out_dir(&tmp, &format!("run{i}"));
        let o = run(&[
            "repair",
            "--data",
            &fx("adult_synth.csv"),
            "--ci",
            &fx("adult_ci.json"),
            "--soft-fraction",
            "0.2",
            "--seed",
            "9",
            "--budget",
            "500",
            "--roles",
            &fx("adult_roles.json"),
            "--threads",
            threads,
            "--out",
            &out,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        seen.push(artifacts(Path::new(&out)));
    }
    assert!(seen[0].len() >= 4);
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
}

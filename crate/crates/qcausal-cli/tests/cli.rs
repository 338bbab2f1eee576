//! End-to-end tests of the binary: golden console output, exit codes,
//! deterministic generation, and the report/DOT artifacts.

use std::path::PathBuf;
use std::process::{Command, Output};

use qcausal::channel::ChoiMatrix;
use qcausal::discovery::build_test_matrix_with_identities;
use qcausal::generate::random_density;
use qcausal::io::{save_dag_spec, save_procmat};
use qcausal::process::{PartySpec, SubsystemRef, SystemLayout};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qcausal"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qcausal-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Two-party identity chain into a party with two open subsystems, chosen so
/// the console output exercises every line shape.
fn golden_input() -> PathBuf {
    let layout = SystemLayout::new(vec![
        PartySpec::new("1", 2, vec![2]),
        PartySpec::new("2", 2, vec![2, 2]),
    ])
    .unwrap();
    let w = build_test_matrix_with_identities(
        &layout,
        &[("1".to_string(), random_density(2, 5).unwrap())],
        &[(
            "2".to_string(),
            vec![SubsystemRef::new("1", 0)],
            ChoiMatrix::identity(2),
        )],
        &[SubsystemRef::new("2", 0), SubsystemRef::new("2", 1)],
    )
    .unwrap();
    let path = tmp("golden.json");
    save_procmat(&w, &path).unwrap();
    path
}

#[test]
fn discover_console_is_golden() {
    let input = golden_input();
    let out = bin().arg("discover").arg(&input).output().unwrap();
    assert!(out.status.success());
    let expected = "\
There are open subsystems: 1 of party 2 of dimension 2
2 of party 2 of dimension 2
the_sets =
    2
    1
Link from party 1 to party 2.
primal_arrows: 1 -> 2
secondary_arrows: (none)
the process is Markovian
";
    assert_eq!(stdout_of(&out), expected);
}

#[test]
fn discover_writes_report_and_dot() {
    let input = golden_input();
    let report_path = tmp("report.json");
    let dot_path = tmp("dag.dot");
    let out = bin()
        .arg("discover")
        .arg(&input)
        .arg("--report")
        .arg(&report_path)
        .arg("--dot")
        .arg(&dot_path)
        .output()
        .unwrap();
    assert!(out.status.success());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["markovian"], serde_json::Value::Bool(true));
    assert_eq!(report["causally_ordered"], serde_json::Value::Bool(true));
    assert_eq!(report["eps"], serde_json::json!(1e-9));
    assert_eq!(
        report["open_subsystems"],
        serde_json::json!([["2", 0], ["2", 1]])
    );
    assert_eq!(report["causal_order"], serde_json::json!([["1"], ["2"]]));
    assert!(report["constraint_tests"].as_u64().unwrap() > 0);

    let dot = std::fs::read_to_string(&dot_path).unwrap();
    let expected_dot = "\
digraph causal_structure {
    \"1\" [label=\"1\\nstate\"];
    \"2\" [label=\"2\\nopen output\"];
    \"1\" -> \"2\" [label=\"1\"];
}
";
    assert_eq!(dot, expected_dot);
}

#[test]
fn single_party_file_gives_one_node_dot() {
    let layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![2])]).unwrap();
    let w = build_test_matrix_with_identities(
        &layout,
        &[("A".to_string(), random_density(2, 8).unwrap())],
        &[],
        &[SubsystemRef::new("A", 0)],
    )
    .unwrap();
    let input = tmp("single.json");
    save_procmat(&w, &input).unwrap();
    let dot_path = tmp("single.dot");
    let out = bin()
        .arg("discover")
        .arg(&input)
        .arg("--dot")
        .arg(&dot_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("the process is Markovian"));
    let dot = std::fs::read_to_string(&dot_path).unwrap();
    assert!(dot.contains("\"A\" [label=\"A\\nstate\\nopen output\"];"));
    assert!(!dot.contains("->"));
}

#[test]
fn generate_markov_roundtrips_through_discover() {
    let layout = SystemLayout::new(vec![
        PartySpec::new("A", 2, vec![2]),
        PartySpec::new("B", 2, vec![2]),
    ])
    .unwrap();
    let spec = qcausal::generate::DagSpec::new(
        layout,
        vec![qcausal::generate::DagEdge::new("A", 0, "B")],
    )
    .unwrap();
    let spec_path = tmp("dag.json");
    save_dag_spec(&spec, &spec_path).unwrap();

    let out_path = tmp("markov.json");
    let truth_path = tmp("markov.truth.json");
    let out = bin()
        .args(["generate", "markov", "--seed", "9", "--spec"])
        .arg(&spec_path)
        .arg("-o")
        .arg(&out_path)
        .arg("--ground-truth")
        .arg(&truth_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&truth_path).unwrap()).unwrap();
    assert_eq!(sidecar["generator"], "markov");
    assert_eq!(sidecar["seed"], 9);
    assert_eq!(sidecar["first"], serde_json::json!(["A"]));
    assert_eq!(sidecar["last"], serde_json::json!(["B"]));

    let run = bin().arg("discover").arg(&out_path).output().unwrap();
    assert!(run.status.success());
    let text = stdout_of(&run);
    assert!(text.contains("Link from party A to party B."));
    assert!(text.contains("the process is Markovian"));
}

#[test]
fn generate_is_deterministic_per_seed() {
    let a = tmp("det-a.json");
    let b = tmp("det-b.json");
    for path in [&a, &b] {
        let out = bin()
            .args(["generate", "comb", "--parties", "2", "--memory-dim", "2", "--seed", "4", "-o"])
            .arg(path)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn comb_is_reported_non_markovian() {
    let path = tmp("comb2.json");
    let out = bin()
        .args(["generate", "comb", "--parties", "2", "--memory-dim", "2", "--seed", "1", "-o"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let run = bin().arg("discover").arg(&path).output().unwrap();
    assert!(run.status.success());
    let text = stdout_of(&run);
    assert!(text.contains("the process is not Markovian"));
    assert!(text.contains("the_sets ="));
}

#[test]
fn mixture_is_reported_not_causally_ordered() {
    let path = tmp("mixture.json");
    let out = bin()
        .args(["generate", "mixture", "--weight", "0.5", "--seed", "2", "-o"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let run = bin().arg("discover").arg(&path).output().unwrap();
    assert!(run.status.success(), "analysis itself succeeds");
    let text = stdout_of(&run);
    assert!(text.contains("the process is not causally ordered"));
    assert!(text.contains("ungrouped parties: A, B"));
}

#[test]
fn validate_reports_violations_without_failing() {
    // A valid file first.
    let good = golden_input();
    let out = bin().arg("validate").arg(&good).output().unwrap();
    assert!(out.status.success());
    assert!(stdout_of(&out).trim_end().ends_with("valid"));

    // Scale the matrix by -1: hermitian, wrong trace, not PSD.
    let layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![2])]).unwrap();
    let m = qcausal::ComplexMatrix::identity(4).scale(num_complex_neg_one());
    let w = qcausal::ProcessMatrix::new(layout, m).unwrap();
    let bad = tmp("bad.json");
    save_procmat(&w, &bad).unwrap();
    let out = bin().arg("validate").arg(&bad).arg("--json").output().unwrap();
    assert!(out.status.success(), "validation ran, so exit 0");
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(report["valid"], serde_json::Value::Bool(false));
    assert!((report["psd_violation"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

fn num_complex_neg_one() -> num_complex::Complex<f64> {
    num_complex::Complex::new(-1.0, 0.0)
}

#[test]
fn oracle_measures_identity_channel() {
    let input = golden_input();
    let out = bin()
        .args(["oracle"])
        .arg(&input)
        .args(["--from", "1", "--to", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let forward: f64 = stdout_of(&out).trim().parse().unwrap();
    assert!((forward - 1.0).abs() < 1e-9, "forward strength {forward}");

    let out = bin()
        .args(["oracle"])
        .arg(&input)
        .args(["--from", "2", "--to", "1"])
        .output()
        .unwrap();
    let backward: f64 = stdout_of(&out).trim().parse().unwrap();
    assert!(backward < 1e-9, "backward strength {backward}");

    // Unknown party is invalid input.
    let out = bin()
        .args(["oracle"])
        .arg(&input)
        .args(["--from", "Z", "--to", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_two() {
    let path = tmp("broken.json");
    std::fs::write(&path, "{\"format\": \"procmat-v1\"").unwrap();
    let out = bin().arg("discover").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("discover").arg("does-not-exist.json").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_process_exits_two() {
    // Not positive semidefinite: discovery rejects the input.
    let layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![2])]).unwrap();
    let m = qcausal::ComplexMatrix::identity(4).scale(num_complex_neg_one());
    let w = qcausal::ProcessMatrix::new(layout, m).unwrap();
    let path = tmp("invalid.json");
    save_procmat(&w, &path).unwrap();
    let out = bin().arg("discover").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

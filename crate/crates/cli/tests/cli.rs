use std::process::{Command, Output};

fn qpflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn classical_csv_on_bundled_fixture() {
    let o = qpflow(&["solve-classical", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("component,theta,normalized"));
    let first: Vec<f64> = lines.next().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((first[0] - 0.0082).abs() < 5e-4);
    assert!((first[1] - 0.5173).abs() < 5e-4);
}

#[test]
fn grid_file_matches_matrix_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, qpflow_core::dcpf::five_bus_grid_source()).unwrap();
    let from_grid = qpflow(&["solve-classical", "--grid", grid.to_str().unwrap()]);
    assert_eq!(from_grid.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&from_grid.stdout).unwrap();
    let theta: Vec<f64> = v["theta"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (t, e) in theta.iter().zip([0.0082, 0.0043, 0.0057, 0.0115]) {
        assert!((t - e).abs() < 5e-4);
    }
}

#[test]
fn malformed_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1 2\n3 x\n1 1\n").unwrap();
    let o = qpflow(&["solve-classical", "--matrix", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    let o = qpflow(&["solve-hhl", "--n-redund", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qpflow(&["solve-classical", "--format", "yaml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn hhl_json_reports_both_errors() {
    let o = qpflow(&["solve-hhl", "--n-accur", "9", "--n-redund", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["n_e_theory"].as_f64().unwrap() - 0.0129).abs() < 5e-4);
    assert!((v["n_e_exp"].as_f64().unwrap() - 0.0130).abs() < 5e-3);
    assert_eq!(v["qubit_total"], 19);
}

#[test]
fn hmpea_and_hspea_solve() {
    let o = qpflow(&["solve-hmpea", "--m-prec", "9", "--n-accur", "1", "--n-redund", "7", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("component,theta,theta_theory,reference"));
    let o = qpflow(&["solve-hspea", "--n-accur", "9", "--n-redund", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["statistics"]["n_module"], 1);
}

#[test]
fn sweep_csv_columns_and_determinism() {
    let args = [
        "sweep", "--algorithm", "hmpea", "--from", "5", "--to", "7", "--n-redund", "7,9", "--mode", "sampled",
        "--shots", "5000", "--seed", "4", "--format", "csv",
    ];
    let a = qpflow(&args);
    let b = qpflow(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(
        text.lines().next().unwrap(),
        "algorithm,n_accur,m_prec,n_redund,n_module,qubit_total,qubit_medium,n_e_exp,n_e_theory,\
         postselect_top,postselect_medium,leakage,shots,seed"
    );
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn sweep_json_has_schema_version() {
    let o = qpflow(&["sweep", "--algorithm", "hhl", "--from", "5", "--to", "6", "--n-redund", "7", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[0]["schema_version"], 1);
}

#[test]
fn empty_sweep_succeeds() {
    let o = qpflow(&["sweep", "--algorithm", "hhl", "--from", "6", "--to", "5", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn strict_sweep_flags_ceiling_skips() {
    let base = ["sweep", "--algorithm", "hhl", "--from", "15", "--to", "15", "--n-redund", "11"];
    assert_eq!(qpflow(&base).status.code(), Some(0));
    let mut strict = base.to_vec();
    strict.push("--strict");
    assert_eq!(qpflow(&strict).status.code(), Some(4));
}

#[test]
fn budget_counts() {
    let o = qpflow(&["budget", "--algorithm", "hmpea", "--precision", "9", "--n-redund", "7", "--n-accur", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"], 10);
    let o = qpflow(&["budget", "--algorithm", "hhl", "--precision", "9", "--n-redund", "7"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((v["medium"].as_u64(), v["total"].as_u64()), (Some(16), Some(19)));
    let o = qpflow(&["budget", "--algorithm", "hhl", "--precision", "15", "--n-redund", "11", "--strict"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn success_surface_csv() {
    let o = qpflow(&["success-surface", "--m-prec", "9", "--accur-max", "3", "--redund-max", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("n_accur,n_redund,n_module,p_success"));
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn reproduce_on_corrupted_fixture_exits_with_acceptance_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    let corrupted = qpflow_core::dcpf::five_bus_matrix_source().replace("0.9046", "0.2046");
    std::fs::write(&bad, corrupted).unwrap();
    let o = qpflow(&["reproduce-paper", "--matrix", bad.to_str().unwrap(), "--seeds", "1,2,3,4,5", "--shots", "2000"]);
    assert_eq!(o.status.code(), Some(3));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("1a,") && l.contains(",fail,")));
}

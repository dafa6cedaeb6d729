use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adstop::policy::PolicyDoc;
use adstop::{phi_to_theta, HmmModel, PhiParams};
use tempfile::TempDir;

fn adstop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adstop"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stop_column(path: &Path) -> Vec<u8> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

fn write_policy(path: &Path, phi: &PhiParams) {
    let doc = PolicyDoc::new(&phi_to_theta(phi), Some(phi));
    fs::write(path, doc.to_json().unwrap()).unwrap();
}

#[test]
fn missing_input_is_a_usage_error_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let o = adstop(tmp.path(), &["fit", "--input", "no_such_file.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_file.csv"), "{}", stderr(&o));
}

#[test]
fn grid_solver_refuses_five_states() {
    let tmp = TempDir::new().unwrap();
    let o = adstop(tmp.path(), &["solve", "--experiment", "youtube"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("force"), "{}", stderr(&o));
}

#[test]
fn empty_detection_series_is_rejected() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.csv"), "viewers\n").unwrap();
    let o = adstop(tmp.path(), &["detect", "--experiment", "buzz-change", "--input", "empty.csv"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn zero_discount_solves_to_all_stop() {
    let tmp = TempDir::new().unwrap();
    let o = adstop(tmp.path(), &["solve", "--experiment", "synthetic", "--rho", "0", "--resolution", "10", "--out-dir", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for l in 1..=5 {
        let col = stop_column(&tmp.path().join(format!("o/stop_set_l{l}.csv")));
        assert_eq!(col.len(), 66);
        assert!(col.iter().all(|&s| s == 1));
    }
    assert!(tmp.path().join("o/solution.csv").is_file());
}

#[test]
fn zero_iterations_echo_the_warm_start() {
    let tmp = TempDir::new().unwrap();
    let phi = PhiParams::new(5, vec![vec![0.4, 1.1, 0.7, 1.3]; 5]).unwrap();
    write_policy(&tmp.path().join("start.json"), &phi);
    let o = adstop(
        tmp.path(),
        &["optimize", "--experiment", "youtube", "--iterations", "0", "--restarts", "1", "--batch", "20", "--horizon", "30", "--warm-start", "start.json", "--out-dir", "o"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = PolicyDoc::from_json(&fs::read_to_string(tmp.path().join("o/policy.json")).unwrap()).unwrap();
    assert_eq!(doc.phi.as_deref(), Some(phi.rows()));
    assert_eq!(doc.policy().unwrap(), phi_to_theta(&phi));
}

#[test]
fn constant_series_fits_one_state() {
    let tmp = TempDir::new().unwrap();
    let body: String = std::iter::once("viewers\n".to_string()).chain((0..100).map(|_| "42\n".to_string())).collect();
    fs::write(tmp.path().join("flat.csv"), body).unwrap();
    let o = adstop(tmp.path(), &["fit", "--input", "flat.csv", "--states", "1-3", "--out-dir", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("selected S = 1"), "{}", stdout(&o));
    let model = HmmModel::from_json(&fs::read_to_string(tmp.path().join("o/model.json")).unwrap()).unwrap();
    assert_eq!(model.emission().poisson_means().unwrap(), &[42.0]);
    for f in ["scores.csv", "qq.csv"] {
        assert!(tmp.path().join("o").join(f).is_file());
    }
}

#[test]
fn malformed_csv_reports_the_line() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.csv"), "viewers\n10\n12\nabc\n9\n").unwrap();
    let o = adstop(tmp.path(), &["fit", "--input", "bad.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn uninformative_absorbing_chain_never_detects() {
    let tmp = TempDir::new().unwrap();
    let model = HmmModel::categorical(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 1.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    fs::write(tmp.path().join("m.json"), model.to_json().unwrap()).unwrap();
    fs::write(tmp.path().join("obs.csv"), "viewers\n0\n1\n1\n0\n1\n").unwrap();
    let o = adstop(tmp.path(), &["detect", "--model", "m.json", "--input", "obs.csv", "--reward", "0,-1", "--resolution", "20", "--out-dir", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("detection: none"), "{}", stdout(&o));
    let path = fs::read_to_string(tmp.path().join("o/belief_path.csv")).unwrap();
    assert_eq!(path.lines().count(), 7);
}

#[test]
fn identical_policies_compare_equal() {
    let tmp = TempDir::new().unwrap();
    let phi = PhiParams::new(5, vec![vec![0.5, 0.5, 1.0, 1.0]; 5]).unwrap();
    write_policy(&tmp.path().join("p.json"), &phi);
    let o = adstop(
        tmp.path(),
        &["compare", "--experiment", "youtube", "--policy", "p.json", "--policy", "p.json", "--batch", "300", "--horizon", "50", "--out-dir", "o"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("p/p#2 = 1.0000"), "{}", stdout(&o));
    let csv = fs::read_to_string(tmp.path().join("o/compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn policy_of_the_wrong_size_is_rejected() {
    let tmp = TempDir::new().unwrap();
    write_policy(&tmp.path().join("small.json"), &PhiParams::new(3, vec![vec![0.5, 1.0]; 5]).unwrap());
    let o = adstop(tmp.path(), &["compare", "--experiment", "youtube", "--policy", "small.json", "--batch", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("S = 3"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_document() {
    let tmp = TempDir::new().unwrap();
    let sub = tmp.path().join("cfg");
    fs::create_dir(&sub).unwrap();
    let model = adstop::experiments::experiment("synthetic").unwrap().model().unwrap();
    fs::write(sub.join("model.json"), model.to_json().unwrap()).unwrap();
    fs::write(
        sub.join("run.json"),
        r#"{"model_file": "model.json", "reward": [9, 3, 1], "L": 2, "rho": 0.0, "grid": {"M": 10}, "output_dir": "out"}"#,
    )
    .unwrap();

    // model_file and output_dir resolve against the document's directory
    let o = adstop(tmp.path(), &["solve", "--config", "cfg/run.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stop_column(&sub.join("out/stop_set_l1.csv")).iter().all(|&s| s == 1));
    assert!(!sub.join("out/stop_set_l3.csv").exists());

    let o = adstop(tmp.path(), &["solve", "--config", "cfg/run.json", "--rho", "0.9", "--out-dir", "flagged"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stop_column(&tmp.path().join("flagged/stop_set_l1.csv")).contains(&0));

    fs::write(sub.join("typo.json"), r#"{"experiment": "synthetic", "rhoo": 0.5}"#).unwrap();
    let o = adstop(tmp.path(), &["solve", "--config", "cfg/typo.json"]);
    assert_eq!(o.status.code(), Some(2));
}

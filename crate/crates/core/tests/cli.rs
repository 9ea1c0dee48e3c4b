use std::path::Path;
use std::process::{Command, Output};

use seqmetro::model::ModelSpec;
use seqmetro::thermometer::ThermometerParams;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqmetro"))
        .args(args)
        .current_dir(dir)
        .env_remove("SEQMETRO_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_thermometer(dir: &Path, name: &str) {
    let p = ThermometerParams::new(1.0, 2.0, 0.7, 0.5, 0.3).unwrap();
    std::fs::write(dir.join(name), ModelSpec::thermometer(&p).unwrap().to_json().unwrap()).unwrap();
}

#[test]
fn analyze_thermometer() {
    let dir = tempfile::tempdir().unwrap();
    write_thermometer(dir.path(), "t.json");
    let o = run(&["analyze", "--model", "t.json", "--L", "2", "--out", "r.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("classification: Mixing"));
    assert!(text.contains("sigma^2"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["classification"], "Mixing");
    assert_eq!(report["asymptotic"]["sigma"].as_array().unwrap().len(), 3);
    // the unit eigenvalue comes first and x = e^{-γβτ} second
    let spectrum = report["spectrum"].as_array().unwrap();
    assert!((spectrum[0][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((spectrum[1][0].as_f64().unwrap() - (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn analyze_identity_channel_is_non_ergodic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{
      "dimension": 2,
      "measurement": [
        {"value": 1, "kraus": [[[[1,0],[0,0]],[[0,0],[0,0]]]]},
        {"value": -1, "kraus": [[[[0,0],[0,0]],[[0,0],[1,0]]]]}
      ],
      "channel": {"kraus": [[[[1,0],[0,0]],[[0,0],[1,0]]]]}
    }"#;
    std::fs::write(dir.path().join("id.json"), spec).unwrap();
    let o = run(&["analyze", "--model", "id.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("classification: NonErgodic"));
    assert!(text.contains("no unique fixed point"));
    let o = run(&["simulate", "--model", "id.json", "--N", "10"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn malformed_input_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"dimension\": 2, \"measurement\": [").unwrap();
    let o = run(&["analyze", "--model", "bad.json", "--out", "r.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert!(!dir.path().join("r.json").exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    let not_tp = r#"{"dimension": 2,
      "measurement": [{"value": 1, "kraus": [[[[1,0],[0,0]],[[0,0],[1,0]]]]}],
      "channel": {"kraus": [[[[0.9,0],[0,0]],[[0,0],[1,0]]]]}}"#;
    std::fs::write(dir.path().join("ntp.json"), not_tp).unwrap();
    let o = run(&["analyze", "--model", "ntp.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());

    let o = run(&["simulate", "--model", "ntp.json", "--N", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--model", "ntp.json", "--N", "5", "--seed", "-3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_thermometer(dir.path(), "t.json");
    let args = ["simulate", "--model", "t.json", "--N", "500", "--L", "2", "--batch", "1", "--seed", "42"];
    let a = run(&args, dir.path());
    let b = run(&args, dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("seed,S,C1,C2\n"));
    assert_eq!(text.lines().count(), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_seqmetro"))
        .args(["simulate", "--model", "t.json", "--N", "200", "--batch", "1200", "--seed", "1", "--out", "b.csv"])
        .current_dir(dir.path())
        .env("SEQMETRO_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b.csv.json")).unwrap()).unwrap();
    assert_eq!(side["batch"], 1200);
    assert!(side["diagnostics"]["excess_kurtosis"].is_number());
    assert!(side["asymptotic"]["sigma2"].is_number());
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1201);

    let o = Command::new(env!("CARGO_BIN_EXE_seqmetro"))
        .args(["simulate", "--model", "t.json", "--N", "10"])
        .current_dir(dir.path())
        .env("SEQMETRO_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_exact_and_cap() {
    let dir = tempfile::tempdir().unwrap();
    write_thermometer(dir.path(), "t.json");
    let o = run(&["simulate", "--model", "t.json", "--N", "8", "--L", "3", "--exact"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["enumeration"]["sequences"], 256);
    let enum_var = v["enumeration"]["covariance"][0][0].as_f64().unwrap();
    let formula_var = v["formulas"]["variance"].as_f64().unwrap();
    assert!((enum_var - formula_var).abs() < 1e-12);
    let o = run(&["simulate", "--model", "t.json", "--N", "24", "--exact"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(o.stdout.is_empty());
}

#[test]
fn export_spec_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["export-spec", "--gamma-beta", "2", "--tau", "0.5", "--eta", "0.3", "--omega", "0.7", "--out", "e.json"],
        dir.path(),
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("e.json")).unwrap();
    let spec = ModelSpec::from_json(&text).unwrap();
    let p = ThermometerParams::new(1.0, 2.0, 0.7, 0.5, 0.3).unwrap();
    assert_eq!(spec, ModelSpec::thermometer(&p).unwrap());
    assert_eq!(spec.to_json().unwrap() + "\n", text);
    let o = run(
        &["export-spec", "--gamma-beta", "2", "--tau", "0.5", "--param", "temperature", "--values", "1,2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn fisher_over_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "export-spec", "--gamma-beta", "2", "--tau", "0.5", "--eta", "0.3",
            "--param", "gamma_beta", "--values", "1.5,2,3", "--out", "f.json",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let o = run(&["fisher", "--model", "f.json", "--L", "2", "--N", "100"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "gamma_beta,N,step,F0,F1,F2,F0_per_N,F1_per_N,F2_per_N,pseudo_inverse_used"
    );
    for line in lines {
        let f: Vec<f64> = line.split(',').skip(3).take(3).map(|x| x.parse().unwrap()).collect();
        assert!(f[0] <= f[1] && f[1] <= f[2]);
    }
    write_thermometer(dir.path(), "plain.json");
    let o = run(&["fisher", "--model", "plain.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thermometer_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["thermometer", "--ratios", "2", "--etas", "0", "--tau-points", "5", "--equilibrium"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(
        lines.next().unwrap(),
        "gamma_beta_over_gamma,tau_gamma,eta,F_standard,F_equilibrium,F0_per_N,F1_per_N,F2_per_N,gain1,gain2"
    );
    assert_eq!(lines.count(), 5);
    let o = run(&["thermometer", "--tau-gamma", "0.5,0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn rskelly(args: &[&str]) -> Output {
    rskelly_env(args, &[])
}

fn rskelly_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rskelly"));
    cmd.args(args).env_remove("RSKELLY_SEED").env_remove("RSKELLY_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn records(csv_text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn scenario_file(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn sweeps_match_golden_tables() {
    for name in ["betting_p060", "betting_p075"] {
        let scenario = fixture(&format!("{name}.json"));
        let out = stdout(&rskelly(&["sweep", scenario.to_str().unwrap(), "--rho-grid", "0:1:0.1"]));
        let golden = std::fs::read_to_string(fixture(&format!("golden/sweep_{name}.csv"))).unwrap();
        assert_eq!(out, golden, "{name}");
    }
}

#[test]
fn kelly_sweep_shape() {
    let out = stdout(&rskelly(&["sweep", fixture("betting_p060.json").to_str().unwrap()]));
    let (header, rows) = records(&out);
    assert_eq!(rows.len(), 11);
    let (rho, k2) = (column(&header, "rho"), column(&header, "k_2"));
    assert_eq!(rows[0][rho], "0");
    assert_eq!(rows[0][k2], "0.4");
    assert_eq!(rows[10][rho], "1");
    let values: Vec<f64> = rows.iter().map(|r| r[k2].parse().unwrap()).collect();
    assert!((values[10] - 0.2035).abs() < 1e-3);
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn output_is_deterministic() {
    let inventory = fixture("inventory.json");
    let scenario = inventory.to_str().unwrap();
    let args = ["optimize", scenario, "--seed", "42"];
    assert_eq!(rskelly(&args).stdout, rskelly(&args).stdout);
    let one = rskelly_env(&["sweep", scenario, "--rho-grid", "0:1:0.25"], &[("RSKELLY_THREADS", "1")]);
    let many = rskelly_env(&["sweep", scenario, "--rho-grid", "0:1:0.25"], &[("RSKELLY_THREADS", "4")]);
    assert_eq!(stdout(&one), stdout(&many));
}

#[test]
fn monte_carlo_fallback_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("betting_p060.json"))
        .unwrap()
        .replace("\"n\": 1 }", "\"n\": 3 },\n  \"atom_cap\": 2,\n  \"mc\": { \"samples\": 20000 }");
    let path = scenario_file(&dir, &text);
    let scenario = path.to_str().unwrap();
    let run = |env: &[(&str, &str)]| stdout(&rskelly_env(&["evaluate", scenario, "--k", "0.6,0.4"], env));
    let a = run(&[("RSKELLY_SEED", "5")]);
    assert_eq!(a, run(&[("RSKELLY_SEED", "5"), ("RSKELLY_THREADS", "3")]));
    assert_ne!(a, run(&[("RSKELLY_SEED", "6")]));
    let (header, rows) = records(&a);
    assert_eq!(rows[0][column(&header, "method")], "monte_carlo");
    assert!(rows[0][column(&header, "stderr")].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn tables_round_trip() {
    let scenario = fixture("betting_p075.json");
    let s = scenario.to_str().unwrap();
    let out = stdout(&rskelly(&["optimize", s, "--seed", "1"]));
    let (header, rows) = records(&out);
    let k = format!("{},{}", rows[0][column(&header, "k_1")], rows[0][column(&header, "k_2")]);
    let u = &rows[0][column(&header, "u")];

    let again = stdout(&rskelly(&["evaluate", s, "--k", &k]));
    let (h2, r2) = records(&again);
    assert_eq!(&r2[0][column(&h2, "u")], u);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).unwrap();
    for row in &rows {
        w.write_record(row).unwrap();
    }
    assert_eq!(String::from_utf8(w.into_inner().unwrap()).unwrap(), out);
}

#[test]
fn writes_to_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("sweep.csv");
    let out = rskelly(&[
        "sweep",
        fixture("betting_p060.json").to_str().unwrap(),
        "--output",
        target.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(stdout(&out).is_empty());
    let written = std::fs::read_to_string(target).unwrap();
    assert_eq!(written, std::fs::read_to_string(fixture("golden/sweep_betting_p060.csv")).unwrap());
}

#[test]
fn uniform_density_is_flat() {
    let out = stdout(&rskelly(&["density", fixture("inventory.json").to_str().unwrap(), "--n-values", "1"]));
    let (header, rows) = records(&out);
    assert_eq!(rows.len(), 100);
    for row in &rows {
        let z: f64 = row[column(&header, "z")].parse().unwrap();
        assert!(z > -1.0 && z < 1.0);
        assert_eq!(row[column(&header, "pdf")], "0.5");
    }
    let explicit = stdout(&rskelly(&[
        "density",
        fixture("inventory.json").to_str().unwrap(),
        "--n-values",
        "2",
        "--z-grid",
        "0:1:1",
    ]));
    let (header, rows) = records(&explicit);
    let pdf: f64 = rows[0][column(&header, "pdf")].parse().unwrap();
    let cdf: f64 = rows[1][column(&header, "cdf")].parse().unwrap();
    assert!((pdf - 0.25 * 4f64.ln()).abs() < 1e-11);
    assert!((cdf - 0.5 * (1.0 + 2f64.ln())).abs() < 1e-11);
}

#[test]
fn log_variance_is_convex() {
    let out = stdout(&rskelly(&["convexity", fixture("inventory.json").to_str().unwrap(), "--n-values", "1,5,10"]));
    let (header, rows) = records(&out);
    assert_eq!(rows.len(), 3 * 49);
    let d2 = column(&header, "d2_log_variance");
    assert!(rows.iter().all(|r| r[d2].parse::<f64>().unwrap() >= -1e-8));
}

#[test]
fn kkt_check_exit_codes() {
    let betting = fixture("betting_p060.json");
    let ok = rskelly(&["kkt-check", betting.to_str().unwrap(), "--k", "0.6,0.4", "--tol", "1e-8"]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = rskelly(&["kkt-check", betting.to_str().unwrap(), "--k", "1,0"]);
    assert_eq!(bad.status.code(), Some(3));
    let (header, rows) = records(&String::from_utf8(bad.stdout).unwrap());
    assert_eq!(rows[1][column(&header, "residual")], "1.1");
    assert_eq!(rows[1][column(&header, "satisfied")], "false");
    let corner = rskelly(&["kkt-check", fixture("inventory.json").to_str().unwrap(), "--k", "1,0"]);
    assert_eq!(corner.status.code(), Some(0));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let betting = std::fs::read_to_string(fixture("betting_p060.json")).unwrap();
    let b = fixture("betting_p060.json");
    let b = b.to_str().unwrap();

    let missing = rskelly(&["optimize", "/nonexistent/scenario.json"]);
    assert_eq!(missing.status.code(), Some(1));

    let path = scenario_file(&dir, &betting.replace("0.4 }", "0.3 }"));
    let sum = rskelly(&["optimize", path.to_str().unwrap()]);
    assert_eq!(sum.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&sum.stderr).contains("probability-sum"));

    let path = scenario_file(&dir, &betting.replace("\"risk\"", "\"risks\""));
    let unknown = rskelly(&["optimize", path.to_str().unwrap()]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("line"));

    for args in [
        vec!["optimize", b, "--frobnicate"],
        vec!["evaluate", b, "--k", "0.7,0.4"],
        vec!["evaluate", b, "--k", "0.5,0.3,0.2"],
        vec!["sweep", b, "--rho-grid", "1:0:0.1"],
        vec!["density", b],
        vec!["optimize", b, "--format", "json"],
        vec!["kkt-check", b, "--k", "0.6,0.4", "--tol", "0"],
    ] {
        assert_eq!(rskelly(&args).status.code(), Some(1), "{args:?}");
    }
    assert_eq!(rskelly(&["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("betting_p060.json"))
        .unwrap()
        .replace("\"n\": 1 }", "\"n\": 1 },\n  \"solver\": { \"max_iters\": 1, \"restarts\": 1 }");
    let path = scenario_file(&dir, &text);
    let out = rskelly(&["optimize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let (header, rows) = records(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows[0][column(&header, "converged")], "false");
}

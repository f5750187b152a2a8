use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use policy_eval::report::read_records;
use policy_eval::estimators::EstimatorKind;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_policy-eval"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn failure(out: Output) -> String {
    assert!(!out.status.success(), "expected failure");
    let msg = String::from_utf8_lossy(&out.stderr).trim().to_string();
    assert_eq!(msg.lines().count(), 1, "single-line diagnostic: {msg}");
    msg
}

fn put(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four singletons split evenly over two locations.
fn toy(dir: &Path) {
    put(
        dir,
        "individuals.csv",
        "individual_id,case_id,location,outcome\ni1,c1,L1,1\ni2,c2,L2,0\ni3,c3,L1,1\ni4,c4,L2,1\n",
    );
    put(
        dir,
        "predictions.csv",
        "individual_id,mu_L1,mu_L2\ni1,0.7,0.2\ni2,0.4,0.6\ni3,0.5,0.5\ni4,0.1,0.9\n",
    );
    put(dir, "policy.csv", "case_id,location\nc1,L1\nc2,L2\nc3,L1\nc4,L2\n");
}

fn records(path: &Path) -> Vec<policy_eval::report::Record> {
    read_records(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn status_quo_policy_on_toy_fixture() {
    let dir = TempDir::new().unwrap();
    toy(dir.path());
    let cfg = put(
        dir.path(),
        "toy.cfg",
        "individuals = individuals.csv\npredictions = predictions.csv\npolicy = policy.csv\n",
    );
    let out = ok(run(&["evaluate", "--config", s(&cfg)]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Point Estimate") && stdout.contains("CI of Gains"));
    let recs = records(&dir.path().join("toy.records.csv"));
    assert_eq!(recs.len(), 4);
    for r in &recs {
        let expected = match r.estimator {
            EstimatorKind::ModelBased => (0.7 + 0.6 + 0.5 + 0.9) / 4.0,
            // with pi = 0.5 the residual terms do not cancel: mu_A + (Y - mu_A) / 0.5
            EstimatorKind::Aipw => (1.3 - 0.6 + 1.5 + 1.1) / 4.0,
            EstimatorKind::Ipw | EstimatorKind::AipwLocal => 0.75,
        };
        assert!((r.point - expected).abs() < 1e-12, "{:?}: {}", r.estimator, r.point);
        assert_eq!(r.n_matched, 4);
    }
    let config = fs::read_to_string(dir.path().join("toy.config.txt")).unwrap();
    assert!(config.contains("pooling = off") && config.contains("seed = none"));
}

#[test]
fn table_numbers_come_from_records() {
    let dir = TempDir::new().unwrap();
    toy(dir.path());
    put(dir.path(), "flip.csv", "case_id,location\nc1,L2\nc2,L1\nc3,L1\nc4,L2\n");
    let cfg = put(
        dir.path(),
        "flip.cfg",
        "individuals = individuals.csv\npredictions = predictions.csv\npolicy = flip.csv\n",
    );
    ok(run(&["evaluate", "--config", s(&cfg)]));
    let table = fs::read_to_string(dir.path().join("flip.report.txt")).unwrap();
    let recs = records(&dir.path().join("flip.records.csv"));
    for r in &recs {
        for cell in policy_eval::report::table_cells(r) {
            assert!(table.contains(&cell), "{cell} missing from\n{table}");
        }
    }
}

#[test]
fn identity_pooling_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    toy(dir.path());
    let base = "name = toy\nindividuals = individuals.csv\npredictions = predictions.csv\npolicy = policy.csv\nseed = 1\n";
    let off = put(dir.path(), "off.cfg", &format!("{base}output_dir = off\n"));
    let on = put(dir.path(), "on.cfg", &format!("{base}output_dir = on\npooling = 0.01\n"));
    ok(run(&["evaluate", "--config", s(&off)]));
    ok(run(&["evaluate", "--config", s(&on)]));
    for f in ["toy.report.txt", "toy.records.csv"] {
        assert_eq!(
            fs::read(dir.path().join("off").join(f)).unwrap(),
            fs::read(dir.path().join("on").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn scenario_grid_writes_reports_and_summary() {
    let dir = TempDir::new().unwrap();
    toy(dir.path());
    put(dir.path(), "flip.csv", "case_id,location\nc1,L2\nc2,L1\nc3,L1\nc4,L2\n");
    let mut args = vec!["evaluate".to_string()];
    for (policy, unit) in [("policy.csv", "case"), ("flip.csv", "case"), ("policy.csv", "individual"), ("flip.csv", "individual")] {
        let name = format!("{}_{unit}", policy.trim_end_matches(".csv"));
        let cfg = put(
            dir.path(),
            &format!("{name}.cfg"),
            &format!("name = {name}\nindividuals = individuals.csv\npredictions = predictions.csv\npolicy = {policy}\nunit = {unit}\noutput_dir = out\n"),
        );
        args.push("--config".into());
        args.push(s(&cfg).into());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(run(&args));
    let out = dir.path().join("out");
    for name in ["policy_case", "flip_case", "policy_individual", "flip_individual"] {
        assert!(out.join(format!("{name}.report.txt")).is_file());
    }
    let summary = fs::read_to_string(out.join("gains_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 16);
    assert!(summary.starts_with("scenario,estimator,baseline,point,gains_pp,gains_percent"));
}

#[test]
fn duplicate_scenario_names_are_rejected() {
    let dir = TempDir::new().unwrap();
    toy(dir.path());
    let cfg = put(
        dir.path(),
        "a.cfg",
        "individuals = individuals.csv\npredictions = predictions.csv\npolicy = policy.csv\n",
    );
    let msg = failure(run(&["evaluate", "--config", s(&cfg), "--config", s(&cfg)]));
    assert!(msg.contains("duplicate scenario"), "{msg}");
}

#[test]
fn config_errors_are_single_line() {
    let dir = TempDir::new().unwrap();
    toy(dir.path());
    let unknown = put(dir.path(), "u.cfg", "individuals = individuals.csv\npolicy = policy.csv\ncolour = red\n");
    assert!(failure(run(&["evaluate", "--config", s(&unknown)])).contains("unknown key colour"));
    let missing = put(dir.path(), "m.cfg", "individuals = nope.csv\npolicy = policy.csv\n");
    assert!(failure(run(&["evaluate", "--config", s(&missing)])).contains("file not found"));
    let two = put(
        dir.path(),
        "t.cfg",
        "individuals = individuals.csv\npredictions = predictions.csv\npolicy = policy.csv\nassignment = offline\n",
    );
    assert!(failure(run(&["evaluate", "--config", s(&two)])).contains("exactly one policy source"));
}

#[test]
fn malformed_input_reports_file_and_row() {
    let dir = TempDir::new().unwrap();
    toy(dir.path());
    put(
        dir.path(),
        "individuals.csv",
        "individual_id,case_id,location,outcome\ni1,c1,L1,1\ni2,c1,L2,0\n",
    );
    let cfg = put(
        dir.path(),
        "bad.cfg",
        "individuals = individuals.csv\npredictions = predictions.csv\npolicy = policy.csv\n",
    );
    let msg = failure(run(&["evaluate", "--config", s(&cfg)]));
    assert!(msg.contains("individuals.csv") && msg.contains("inconsistent case placement"), "{msg}");
}

/// Two cases with unit capacities: c1 prefers L1 by more than c2 does.
fn two_case(dir: &Path) {
    put(
        dir,
        "individuals.csv",
        "individual_id,case_id,location,outcome,arrival\ni1,c1,L1,1,2\ni2,c2,L2,0,1\n",
    );
    put(dir, "capacities.csv", "location_id,capacity\nL1,1\nL2,1\n");
    put(dir, "predictions.csv", "individual_id,mu_L1,mu_L2\ni1,0.9,0.1\ni2,0.8,0.2\n");
}

fn policy_lines(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().skip(1).map(str::to_string).collect();
    lines.sort();
    lines
}

#[test]
fn assign_offline_online_and_passthrough() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    two_case(d);
    let common = "individuals = individuals.csv\ncapacities = capacities.csv\npredictions = predictions.csv\n";
    let offline = put(d, "off.cfg", &format!("{common}assignment = offline\n"));
    ok(run(&["assign", "--config", s(&offline), "--out", s(&d.join("off.csv"))]));
    assert_eq!(policy_lines(&d.join("off.csv")), ["c1,L1", "c2,L2"]);

    let online = put(d, "on.cfg", &format!("{common}assignment = online\narrival_column = arrival\n"));
    ok(run(&["assign", "--config", s(&online), "--out", s(&d.join("on.csv"))]));
    assert_eq!(policy_lines(&d.join("on.csv")), ["c1,L2", "c2,L1"]);

    put(d, "given.csv", "case_id,location\nc2,L1\nc1,L2\n");
    let given = put(d, "given.cfg", &format!("{common}policy = given.csv\n"));
    ok(run(&["assign", "--config", s(&given), "--out", s(&d.join("copy.csv"))]));
    assert_eq!(policy_lines(&d.join("copy.csv")), policy_lines(&d.join("given.csv")));
}

#[test]
fn pool_inspect_lists_members() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut rows = String::from("individual_id,case_id,location,outcome\n");
    for i in 0..200 {
        let loc = match i {
            0 => "L3",
            1 => "L4",
            _ if i % 2 == 0 => "L1",
            _ => "L2",
        };
        rows.push_str(&format!("i{i},c{i},{loc},0\n"));
    }
    put(d, "individuals.csv", &rows);
    let cfg = put(d, "p.cfg", "individuals = individuals.csv\npooling = 0.01\n");
    let out = ok(run(&["pool-inspect", "--config", s(&cfg)]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text,
        "original_location,pooled_location,weight\nL3,POOL,0.5\nL4,POOL,0.5\nL1,L1,1\nL2,L2,1\n"
    );
}

#[test]
fn simulate_enumeration_and_smoke_runs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let enumerate = put(d, "e.cfg", "n = 4\nk = 2\nnoise = 0.2\nmode = enumerate\npolicy = random\noutput = e.csv\n");
    ok(run(&["simulate", "--config", s(&enumerate), "--seed", "3"]));
    let text = fs::read_to_string(d.join("e.csv")).unwrap();
    let aipw = text.lines().find(|l| l.starts_with("AIPW,")).unwrap();
    let bias: f64 = aipw.split(',').nth(2).unwrap().parse().unwrap();
    assert!(bias.abs() < 1e-12, "{aipw}");

    let mc = put(d, "m.cfg", "n = 50\nk = 3\nreplications = 10\noutput = m.csv\n");
    ok(run(&["simulate", "--config", s(&mc), "--seed", "9"]));
    let first = fs::read(d.join("m.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    for line in text.lines().skip(1).filter(|l| !l.starts_with("Model-Based")) {
        let coverage: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&coverage), "{line}");
    }
    ok(run(&["simulate", "--config", s(&mc), "--seed", "9"]));
    assert_eq!(fs::read(d.join("m.csv")).unwrap(), first);

    let msg = failure(run(&["simulate", "--config", s(&mc)]));
    assert!(msg.contains("--seed is required"), "{msg}");
}

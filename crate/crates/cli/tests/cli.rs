use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
scenario = "ramp_reject"
seed = 7

[formation]
circles = 2
initial_noise = 0.05

[simulation]
horizon = 2.0
dt = 0.001
record_every = 50
"#;

fn scalenet(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalenet"))
        .args(args)
        .env("SCALENET_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn certify_reports_feasible_reference_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = scalenet(&["certify", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("feasible: true"));
    assert!(text.contains("route: analytic"));
    assert!(tmp.path().join("certificate.txt").exists());
}

#[test]
fn certify_exits_one_when_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "scenario = \"track\"\n[formation]\ncircles = 1\n[certificate]\nalpha = [0.0, 0.0]\n",
    );
    let out = scalenet(&["certify", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("feasible: false"));
}

#[test]
fn config_errors_exit_two_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "scenario = \"track\"\n[delay]\ntau = 0.0005\n");
    let bad_dt = write_config(
        tmp.path(),
        "dt.toml",
        "scenario = \"track\"\n[simulation]\ndt = 0.5\nhorizon = 5.0\n",
    );
    let out = scalenet(&["simulate", &bad_dt], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("simulation.dt") && err.contains("dt <= tau"), "{err}");

    let unknown = write_config(tmp.path(), "u.toml", "scenario = \"track\"\ncolour = 1\n");
    let out = scalenet(&["certify", &unknown], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("colour"));

    // dt = 1e-3 > tau = 5e-4
    let out = scalenet(&["simulate", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = scalenet(&["certify", "/nonexistent/config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = scalenet(&["frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_trace_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = scalenet(&["simulate", &cfg], &a);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    scalenet(&["simulate", &cfg], &b);
    let ta = fs::read(a.join("trace.csv")).unwrap();
    let tb = fs::read(b.join("trace.csv")).unwrap();
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,agent_id,circle,dev_p,x1,x2,r1_1,r1_2,r2_1,r2_2,bound");
    // 41 recorded times, 12 robots each
    assert_eq!(lines.count(), 41 * 12);
    assert!(a.join("plot.py").exists());
    assert!(a.join("certificate.txt").exists());
}

#[test]
fn sweep_writes_one_row_per_circle_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.toml",
        "scenario = \"sweep\"\n[formation]\ncircles = 3\n[simulation]\nhorizon = 1.0\n",
    );
    let out = scalenet(&["sweep", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "circles,circle,max_dev");
    assert_eq!(rows.len(), 1 + 1 + 2 + 3);
    assert!(rows[1].starts_with("1,1,"));
    assert!(rows[6].starts_with("3,3,"));
}

#[test]
fn check_echoes_defaults_that_parse_back() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "m.toml", "scenario = \"track\"\n");
    let out = scalenet(&["check", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("k0 = 1.4342"));
    let again = write_config(tmp.path(), "again.toml", &text);
    let out2 = scalenet(&["check", &again], tmp.path());
    assert_eq!(String::from_utf8(out2.stdout).unwrap(), text);
}

#[test]
fn halanay_prints_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = scalenet(&["halanay", "--a", "-2", "--b", "1", "--tau", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rate: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("lambda_hat: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rate - 0.442_854_401_002_388_65).abs() < 1e-10);

    let out = scalenet(&["halanay", "--a", "-1", "--b", "2", "--tau", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

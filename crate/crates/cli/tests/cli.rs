use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rezone-sim")).args(args).output().expect("binary runs")
}

fn run(spec: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", spec.to_str().unwrap()];
    args.extend_from_slice(extra);
    sim(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn honest_run_exits_zero() {
    let out = run(&scenario("honest-two-zones"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("P3: holds"));
}

#[test]
fn attack_a1_is_blocked() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&scenario("attack-a1"), &["--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("attack A1"), "{}", stdout(&out));
    assert!(stdout(&out).contains(": blocked"));
    let json = fs::read_to_string(report).unwrap();
    assert!(json.contains("\"outcome\": \"blocked\""));
}

#[test]
fn malformed_spec_exits_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    fs::write(
        &spec,
        r#"
name = "bad"
[[zones]]
id = 1
smc = [100, 200]
program = []
[[cores]]
id = 0
program = [{ op = "read", addr = "zone7" }]
"#,
    )
    .unwrap();
    let out = run(&spec, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cores[0].program[0].addr"), "{}", stderr(&out));

    fs::write(&spec, "name = \"bad\"\n[system]\ncorez = 2\n").unwrap();
    let out = run(&spec, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("corez"), "{}", stderr(&out));

    let out = run(&dir.path().join("missing.toml"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn violation_exits_one_and_still_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let trace = dir.path().join("t.ndjson");
    let out = run(
        &scenario("mutant-no-flush"),
        &["--report", report.to_str().unwrap(), "--trace", trace.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stdout(&out).contains("VIOLATED"));
    let json = fs::read_to_string(report).unwrap();
    assert!(json.contains("\"all_hold\": false"));
    assert!(fs::read_to_string(trace).unwrap().contains("\"event\":\"VIOLATION\""));
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("t{i}.ndjson"))).collect();
    for p in &paths {
        let out = run(&scenario("honest-two-zones"), &["--seed", "42", "--trace", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(&paths[0]).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(&paths[1]).unwrap());
    for (i, line) in String::from_utf8(a).unwrap().lines().enumerate() {
        assert!(line.starts_with('{') && line.contains(&format!("\"seq\":{i}")), "{line}");
    }
}

#[test]
fn flags_override_the_document() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run(
        &scenario("honest-two-zones"),
        &["--config", "norz", "--explore", "--depth", "12", "--report", report.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("explored"));
    let json = fs::read_to_string(report).unwrap();
    assert!(json.contains("\"config\": \"norz\""));
    assert!(json.contains("\"depth\": 12"));

    let out = run(&scenario("honest-two-zones"), &["--config", "tz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_prints_csv() {
    let out = sim(&["compare"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = stdout(&out);
    assert!(csv.starts_with("workload,config,total"));
    assert_eq!(csv.lines().count(), 16);

    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.toml");
    fs::write(&w, "mq_roundtrip = -2.0\n").unwrap();
    let out = sim(&["compare", "--weights", w.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

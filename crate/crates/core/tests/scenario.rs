use std::path::PathBuf;

use rezone_core::cost::DeploymentConfig;
use rezone_core::scenario::{run_scenario, RunError, RunOptions, ScenarioSpec, SpecError};

fn bundled(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    ScenarioSpec::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const MINIMAL: &str = r#"
name = "minimal"
[schedule]
mode = "in-order"
[[zones]]
id = 1
smc = [100, 200]
program = [{ op = "work", units = 1 }]
[[cores]]
id = 0
program = [{ op = "smc", id = 100 }]
"#;

fn invalid_field(text: &str) -> String {
    match ScenarioSpec::from_toml(text) {
        Err(SpecError::Invalid { field, .. }) => field,
        other => panic!("expected a field error, got {other:?}"),
    }
}

#[test]
fn bundled_scenarios_meet_expectations() {
    for (name, holds) in [
        ("honest-two-zones", true),
        ("attack-a1", true),
        ("attack-a5", true),
        ("preempted-zone", true),
        ("mutant-no-flush", false),
    ] {
        let out = run_scenario(&bundled(name), &RunOptions::default()).unwrap();
        assert_eq!(out.report.all_hold, holds, "{name}");
        assert!(!out.trace.is_empty(), "{name}");
    }
}

#[test]
fn attack_report_says_blocked() {
    let out = run_scenario(&bundled("attack-a1"), &RunOptions::default()).unwrap();
    let a = out.report.attack.as_ref().expect("attack summary");
    assert_eq!(a.blocked_runs, a.runs);
    assert!(out.report.to_json().contains("\"outcome\": \"blocked\""));
}

#[test]
fn identical_inputs_give_identical_traces() {
    let spec = bundled("honest-two-zones");
    let opts = RunOptions { seed: Some(9), ..RunOptions::default() };
    let a = run_scenario(&spec, &opts).unwrap();
    let b = run_scenario(&spec, &opts).unwrap();
    assert_eq!(a.trace.to_ndjson(), b.trace.to_ndjson());
    assert_eq!(a.report.to_json(), b.report.to_json());
}

#[test]
fn seed_override_changes_the_schedule() {
    let spec = bundled("honest-two-zones");
    let traces: std::collections::BTreeSet<String> = (0..6)
        .map(|s| run_scenario(&spec, &RunOptions { seed: Some(s), ..RunOptions::default() }).unwrap().trace.to_ndjson())
        .collect();
    assert!(traces.len() > 1);
}

#[test]
fn config_override_applies() {
    let spec = ScenarioSpec::from_toml(MINIMAL).unwrap();
    let rz = run_scenario(&spec, &RunOptions::default()).unwrap();
    let norz = run_scenario(&spec, &RunOptions { config: Some(DeploymentConfig::NoRz), ..RunOptions::default() }).unwrap();
    assert_eq!(rz.report.config, DeploymentConfig::Rz);
    assert_eq!(norz.report.config, DeploymentConfig::NoRz);
    assert!(rz.trace.count("MQ_SEND") > 0);
    assert_eq!(norz.trace.count("MQ_SEND"), 0);
    assert!(rz.report.costs.total > norz.report.costs.total);
}

#[test]
fn explore_flag_reports_the_search() {
    let spec = ScenarioSpec::from_toml(MINIMAL).unwrap();
    let out = run_scenario(&spec, &RunOptions { explore: true, depth: Some(200), ..RunOptions::default() }).unwrap();
    let x = out.report.exploration.expect("exploration summary");
    assert!(x.exhausted);
    assert!(x.states_visited > 0);
    assert!(out.report.all_hold);
}

#[test]
fn symbolic_addresses_resolve() {
    let text = MINIMAL.replace(
        r#"program = [{ op = "smc", id = 100 }]"#,
        r#"program = [{ op = "write", addr = "shared+0x40", value = 3 }, { op = "read", addr = "0x100" }]"#,
    );
    let spec = ScenarioSpec::from_toml(&text).unwrap();
    assert!(run_scenario(&spec, &RunOptions::default()).unwrap().report.all_hold);
}

#[test]
fn errors_name_the_offending_field() {
    let undeclared = MINIMAL.replace(r#"{ op = "smc", id = 100 }"#, r#"{ op = "read", addr = "zone3+0x10" }"#);
    assert_eq!(invalid_field(&undeclared), "cores[0].program[0].addr");

    let empty_range = MINIMAL.replace("smc = [100, 200]", "smc = [200, 200]");
    assert_eq!(invalid_field(&empty_range), "zones[0].smc");

    let bad_core = MINIMAL.replace("id = 0", "id = 5");
    assert_eq!(invalid_field(&bad_core), "cores[0].id");

    let bad_attack = format!("attack = \"A9\"\n{MINIMAL}");
    assert_eq!(invalid_field(&bad_attack), "attack");

    let unknown_key = MINIMAL.replace("[schedule]", "[schedule]\nsed = 3");
    let msg = ScenarioSpec::from_toml(&unknown_key).unwrap_err().to_string();
    assert!(msg.contains("sed"), "{msg}");

    let bad_op = MINIMAL.replace(r#"op = "work""#, r#"op = "dance""#);
    assert!(matches!(ScenarioSpec::from_toml(&bad_op), Err(SpecError::Parse(_))));
}

#[test]
fn unknown_region_is_caught_when_building() {
    let text = MINIMAL.replace(r#"{ op = "smc", id = 100 }"#, r#"{ op = "read", addr = "attic+0x10" }"#);
    let spec = ScenarioSpec::from_toml(&text).unwrap();
    match run_scenario(&spec, &RunOptions::default()) {
        Err(RunError::Spec(SpecError::Invalid { field, message })) => {
            assert_eq!(field, "cores[0].program[0].addr");
            assert!(message.contains("attic"));
        }
        other => panic!("unexpected {:?}", other.map(|o| o.report)),
    }
}

#[test]
fn deployment_names_match_the_command_line() {
    for d in DeploymentConfig::ALL {
        let text = format!("config = \"{}\"\n{MINIMAL}", d.label());
        assert_eq!(ScenarioSpec::from_toml(&text).unwrap().config, d);
        assert_eq!(d.label().parse::<DeploymentConfig>(), Ok(d));
    }
}

#[test]
fn misspelt_mitigation_is_rejected() {
    let text = format!("{MINIMAL}\n[mitigations]\nflush_cache = false\n");
    let msg = ScenarioSpec::from_toml(&text).unwrap_err().to_string();
    assert!(msg.contains("flush_cache"), "{msg}");
    let text = format!("{MINIMAL}\n[mitigations]\nflush_caches = false\n");
    assert!(!ScenarioSpec::from_toml(&text).unwrap().mitigations.flush_caches);
}

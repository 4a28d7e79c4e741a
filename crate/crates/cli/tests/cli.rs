use std::path::Path;
use std::process::{Command, Output};

fn clc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clc")).args(args).env("CLC_OUTPUT_DIR", out).output().expect("clc runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn violations(rep: &serde_json::Value, checker: &str) -> u64 {
    rep["checks"].as_array().unwrap().iter().find(|c| c["checker"] == checker).unwrap()["violations"].as_u64().unwrap()
}

#[test]
fn lists_every_bundled_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = clc(&["list-scenarios"], dir.path());
    assert!(o.status.success());
    for name in clc_sim::library::names() {
        assert!(stdout(&o).contains(name), "{name} missing");
    }
}

#[test]
fn baseline_run_passes_and_writes_artifacts_under_the_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = clc(&["run", "synchronous-baseline", "--set", "duration=800", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    for ext in ["trace.jsonl", "report.json", "slots.csv", "cadence.csv", "recency.csv", "latency.csv"] {
        assert!(dir.path().join(format!("synchronous-baseline-seed7.{ext}")).exists(), "{ext}");
    }
    let rep = report(&dir.path().join("synchronous-baseline-seed7.report.json"));
    assert_eq!(rep["seed"], 7);
    for c in ["cp0", "fin-safety", "ada-safety", "common-prefix", "nesting"] {
        assert_eq!(violations(&rep, c), 0, "{c}");
    }
}

#[test]
fn declared_expected_violations_do_not_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = clc(&["run", "partition-private-attack"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let rep = report(&dir.path().join("partition-private-attack-seed1.report.json"));
    assert!(violations(&rep, "ada-safety") > 0);

    let o = clc(&["run", "partition-private-attack", "--set", "checkers.must-pass=[\"ada-safety\"]"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = clc_sim::library::source("synchronous-baseline").unwrap().replace("mode = \"m2\"", "mode = \"m9\"");
    std::fs::write(&path, text).unwrap();
    let o = clc(&["validate-config", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("network.mode"));
}

#[test]
fn validate_config_output_reparses_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = clc(&["validate-config", "deadlock-flush", "-D", "k=10"], dir.path());
    assert!(o.status.success());
    let again = clc_sim::scenario::ScenarioConfig::from_toml(&stdout(&o)).unwrap();
    let direct = clc_sim::library::load("deadlock-flush", &["k=10".into()]).unwrap();
    assert_eq!(again, direct);
}

#[test]
fn replay_is_byte_identical_and_catches_a_mutated_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = clc(&["run", "partition-recovery", "--set", "duration=1500"], dir.path());
    assert!(o.status.success());
    let trace = dir.path().join("partition-recovery-seed1.trace.jsonl");
    let golden = dir.path().join("partition-recovery-seed1.report.json");
    let o = clc(&["replay", trace.to_str().unwrap(), "--expect", golden.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    // Make one honest node halt on a different value than the others.
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let halts: Vec<usize> = (0..lines.len()).filter(|&i| lines[i].contains("\"kind\":\"iteration-halt\"")).collect();
    let i = halts[1];
    let rec: serde_json::Value = serde_json::from_str(&lines[i]).unwrap();
    let tip = rec["value"]["chain"].as_u64().unwrap();
    lines[i] = lines[i].replace(&format!("\"chain\":{tip}"), &format!("\"chain\":{}", tip - 1));
    let mutated = dir.path().join("mutated.jsonl");
    std::fs::write(&mutated, lines.join("\n") + "\n").unwrap();
    let o = clc(&["replay", mutated.to_str().unwrap(), "--expect", golden.to_str().unwrap()], dir.path());
    assert_ne!(o.status.code(), Some(0));
    let o = clc(&["replay", mutated.to_str().unwrap(), "--checker", "cp0"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn truncated_trace_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(clc(&["run", "synchronous-baseline", "--set", "duration=300"], dir.path()).status.success());
    let trace = dir.path().join("synchronous-baseline-seed1.trace.jsonl");
    let text = std::fs::read_to_string(&trace).unwrap();
    std::fs::write(&trace, &text[..text.len() / 3]).unwrap();
    let o = clc(&["replay", trace.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn battery_aggregates_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = clc(&["battery", "synchronous-baseline", "--seeds", "3", "--set", "duration=600"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let agg = report(&dir.path().join("battery.json"));
    assert_eq!(agg[0]["seeds"], serde_json::json!([1, 2, 3]));
}

#[test]
fn replay_with_a_checker_subset_runs_only_those() {
    let dir = tempfile::tempdir().unwrap();
    assert!(clc(&["run", "synchronous-baseline", "--set", "duration=300"], dir.path()).status.success());
    let trace = dir.path().join("synchronous-baseline-seed1.trace.jsonl");
    let out = dir.path().join("r.json");
    let o = clc(
        &[
            "replay",
            trace.to_str().unwrap(),
            "--checker",
            "nesting",
            "--checker",
            "cp0",
            "--report",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let checks: Vec<String> =
        report(&out)["checks"].as_array().unwrap().iter().map(|c| c["checker"].as_str().unwrap().to_string()).collect();
    assert_eq!(checks, ["cp0", "nesting"]);
    let bad = clc(&["replay", trace.to_str().unwrap(), "--checker", "cp9"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

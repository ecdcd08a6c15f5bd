use std::process::{Command, Output};

use serde_json::Value;

fn prpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prpd"))
        .args(args)
        .env_remove("PRPD_ENUM_LIMIT_LOG2")
        .output()
        .expect("binary runs")
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("every stdout line is JSON"))
        .collect()
}

fn of_kind<'a>(rs: &'a [Value], kind: &str) -> Vec<&'a Value> {
    rs.iter().filter(|r| r["record"] == kind).collect()
}

#[test]
fn two_step_build_has_one_terminal_node() {
    let out = prpd(&["build-prpd", "--n", "2", "--w", "2", "--k", "1"]);
    assert!(out.status.success());
    let rs = records(&out);
    let nodes = of_kind(&rs, "ledger-node");
    assert_eq!(nodes.len(), 1);
    assert_eq!(nodes[0]["terminal"], true);
    assert_eq!(of_kind(&rs, "generator")[0]["error_bound"], "0");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = ["build-prpd", "--n", "8", "--w", "2", "--k", "1", "--sampler", "hash", "--policy", "record"];
    let a = prpd(&args);
    let b = prpd(&args);
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn eight_step_ledger_checks_out() {
    let out = prpd(&["ledger-check", "--n", "8", "--w", "2", "--k", "1"]);
    assert!(out.status.success());
    let rs = records(&out);
    assert!(of_kind(&rs, "ledger-row").iter().all(|r| r["ok"] == true));
    assert_eq!(of_kind(&rs, "summary")[0]["all_ok"], true);
}

#[test]
fn ledger_check_reads_a_saved_generator() {
    let dir = std::env::temp_dir().join(format!("prpd-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("g.json");
    let f = file.to_str().unwrap();
    assert!(prpd(&["build-prpd", "--n", "4", "--k", "1", "--out", f]).status.success());
    let out = prpd(&["ledger-check", "--from", f]);
    assert!(out.status.success());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn random_programs_stay_within_the_bound() {
    let out = prpd(&["verify-error", "--n", "4", "--w", "2", "--k", "1", "--robps", "20"]);
    assert!(out.status.success());
    let rs = records(&out);
    assert_eq!(of_kind(&rs, "instance").len(), 20);
    let summary = of_kind(&rs, "summary")[0];
    assert_eq!(summary["all_ok"], true);
    assert_eq!(summary["bound_kind"], "proven");
}

#[test]
fn identity_program_has_zero_error() {
    let out = prpd(&["verify-error", "--n", "8", "--k", "1", "--identity", "--sampler", "xor", "--policy", "record"]);
    assert!(out.status.success());
    let rs = records(&out);
    assert_eq!(of_kind(&rs, "summary")[0]["max_robust_error"], "0");
}

#[test]
fn enumeration_sampler_is_exact() {
    let out = prpd(&["certify-sampler", "--backend", "enumeration", "--m", "5"]);
    assert!(out.status.success());
    let rs = records(&out);
    let cert = &of_kind(&rs, "certificate")[0]["certificate"];
    assert_eq!(cert["eps"], "0");
    assert_eq!(cert["delta"], "0");
}

#[test]
fn impossible_sampler_request_exits_one() {
    let out = prpd(&["certify-sampler", "--backend", "hash", "--n", "3", "--d", "2", "--m", "4", "--eps", "0", "--delta", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_input_exits_two_with_an_error_record() {
    let out = prpd(&["build-prpd", "--n", "0", "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(of_kind(&records(&out), "error")[0]["kind"], "input");
}

#[test]
fn sz_demo_is_reproducible_and_within_bound() {
    let args = ["sz-demo", "--w", "3", "--n1", "2", "--n2", "3", "--d", "8", "--matrices", "5", "--seed", "7"];
    let a = prpd(&args);
    let b = prpd(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let rs = records(&a);
    assert!(of_kind(&rs, "sz-run").iter().all(|r| r["ok"] == true));
}

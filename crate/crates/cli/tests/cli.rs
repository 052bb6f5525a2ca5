use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn argan(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_argan"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .env_remove("ARGAN_CACHE_DIR")
        .output()
        .expect("binary runs")
}

/// Runs under the desk profile, whose defaults need no external data.
fn desk(out: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--profile", "desk"];
    all.extend_from_slice(args);
    argan(out, &all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn events(out: &Path) -> Vec<Value> {
    std::fs::read_to_string(out.join("run_log.jsonl"))
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn count(evs: &[Value], event: &str, sub: &str) -> usize {
    evs.iter().filter(|e| e["event"] == event && e["subcommand"] == sub).count()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_config_key_is_a_validation_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[attacks]\nepsilom = 0.1\n");
    let o = argan(dir.path(), &["--config", &cfg, "config"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilom"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(argan(dir.path(), &["no-such-stage"]).status.code(), Some(2));
    let o = argan(dir.path(), &["reproduce-desk", "--profile", "paper"]);
    assert_eq!(o.status.code(), Some(2));
    let lisa = write(dir.path(), "lisa.toml", "[dataset]\nsource = \"lisa\"\n");
    let o = argan(dir.path(), &["--config", &lisa, "reproduce-desk"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stages_out_of_order_name_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = desk(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("evaluation.json") && err.contains("missing_artifact"), "{err}");
    let o = desk(dir.path(), &["attack"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("ingest"), "{}", stderr(&o));
    // the failure is also in the run log
    assert_eq!(count(&events(dir.path()), "error", "attack"), 1);
}

#[test]
fn reordered_config_reruns_as_noop_until_forced() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.toml", "seed = 3\n[dataset]\nn_per_class = 8\nsplit_seed = 7\n");
    let b = write(dir.path(), "b.toml", "seed = 3\n\n[dataset]\nsplit_seed = 7\nn_per_class = 8\n");
    assert_eq!(desk(dir.path(), &["--config", &a, "ingest"]).status.code(), Some(0));
    assert!(dir.path().join("data/meta.json").is_file());
    assert_eq!(desk(dir.path(), &["--config", &b, "ingest"]).status.code(), Some(0));
    let evs = events(dir.path());
    assert_eq!(count(&evs, "finish", "ingest"), 1);
    assert_eq!(count(&evs, "skip", "ingest"), 1);

    assert_eq!(desk(dir.path(), &["--config", &a, "--force", "ingest"]).status.code(), Some(0));
    assert_eq!(count(&events(dir.path()), "finish", "ingest"), 2);
}

#[test]
fn artifacts_from_another_config_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.toml", "seed = 3\n[dataset]\nn_per_class = 8\n");
    assert_eq!(desk(dir.path(), &["--config", &a, "ingest"]).status.code(), Some(0));
    let o = desk(dir.path(), &["--config", &a, "--seed", "4", "train-classifier"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("stage_failure") && err.contains("rerun `ingest`"), "{err}");
}

#[test]
fn config_subcommand_prints_a_loadable_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = argan(dir.path(), &["--profile", "desk", "config"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let dumped = write(dir.path(), "dumped.toml", &text);
    assert_eq!(argan(dir.path(), &["--config", &dumped, "config"]).status.code(), Some(0));
}

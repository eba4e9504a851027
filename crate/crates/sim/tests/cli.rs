use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sla_ledger::bundled_path;

fn cli(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sla-ledger"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_into(dir: &Path) -> Output {
    cli(&[&"run", &bundled_path("surgery-breach"), &"--out", &dir])
}

#[test]
fn run_writes_artefacts_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["events.jsonl", "metrics.json", "chains/hospital-net-ch0.chain", "chains/hospital-net-ch1.chain"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);

    let r = cli(&[&"replay", &dir.path().join("events.jsonl")]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let replayed: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(replayed, saved);
}

#[test]
fn reports_can_be_listed_and_shown() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(dir.path())), 0);
    let ls = cli(&[&"report", &"ls", &dir.path()]);
    assert_eq!(code(&ls), 0);
    let names = String::from_utf8(ls.stdout).unwrap();
    assert!(names.lines().any(|l| l == "final-surgery-1.json"), "{names}");
    assert!(names.lines().any(|l| l == "violations.json"));
    let show = cli(&[&"report", &"show", &dir.path(), &"final-surgery-1.json"]);
    assert_eq!(code(&show), 0);
    let report: serde_json::Value = serde_json::from_slice(&show.stdout).unwrap();
    assert_eq!(report["report"]["sla_id"], "surgery-1");
    assert_eq!(code(&cli(&[&"report", &"show", &dir.path(), &"nope.json"])), 4);
}

#[test]
fn verify_flags_a_tampered_export() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(dir.path())), 0);
    let chain = dir.path().join("chains/hospital-net-ch0.chain");
    let ok = cli(&[&"verify", &chain]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));

    // Drop block 3: heights no longer line up from there.
    let text = fs::read_to_string(&chain).unwrap();
    let kept: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 3).map(|(_, l)| l).collect();
    let cut = dir.path().join("cut.chain");
    fs::write(&cut, kept.join("\n")).unwrap();
    let bad = cli(&[&"verify", &cut]);
    assert_eq!(code(&bad), 3);
    assert!(stderr(&bad).contains("height 3"), "{}", stderr(&bad));

    let garbage = dir.path().join("garbage.chain");
    fs::write(&garbage, "zz 00\n").unwrap();
    assert_eq!(code(&cli(&[&"verify", &garbage])), 2);
}

#[test]
fn malformed_scenario_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\nname = \"x\"\nseed = 1\nduration = \"long\"\n").unwrap();
    let o = cli(&[&"run", &bad, &"--out", &dir.path().join("out")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.toml:4"), "{}", stderr(&o));

    let wrong = dir.path().join("wrong.toml");
    let text = fs::read_to_string(bundled_path("football-slice")).unwrap();
    fs::write(&wrong, text.replace("schema_version = 1", "schema_version = 2")).unwrap();
    let o = cli(&[&"run", &wrong, &"--out", &dir.path().join("out")]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn damaged_log_exits_3_and_old_schema_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(dir.path())), 0);
    let log = fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    let truncated = dir.path().join("truncated.jsonl");
    fs::write(&truncated, &log[..log.len() * 2 / 3]).unwrap();
    let o = cli(&[&"replay", &truncated]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("corrupt log"), "{}", stderr(&o));

    let old = dir.path().join("old.jsonl");
    fs::write(&old, log.replacen("\"schema_version\":1", "\"schema_version\":0", 1)).unwrap();
    assert_eq!(code(&cli(&[&"replay", &old])), 2);
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("gone");
    assert_eq!(code(&cli(&[&"run", &gone, &"--out", &dir.path()])), 4);
    assert_eq!(code(&cli(&[&"replay", &gone])), 4);
    assert_eq!(code(&cli(&[&"verify", &gone])), 4);
}

#[test]
fn seed_and_until_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let path = bundled_path("surgery-breach");
    assert_eq!(code(&cli(&[&"run", &path, &"--out", &a, &"--seed", &"1", &"--until", &"100"])), 0);
    assert_eq!(code(&cli(&[&"run", &path, &"--out", &b, &"--seed", &"2", &"--until", &"100"])), 0);
    let la = fs::read_to_string(a.join("events.jsonl")).unwrap();
    let lb = fs::read_to_string(b.join("events.jsonl")).unwrap();
    assert!(la.starts_with("{\"schema_version\":1,\"scenario\":\"surgery-breach\",\"seed\":1}"));
    assert_ne!(la, lb);
}

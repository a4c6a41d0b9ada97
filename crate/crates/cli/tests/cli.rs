//! The binary's exit codes and outputs against checked-in golden files.
//! `BLESS=1 cargo test -p smrcheck-cli` rewrites them.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn smrcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smrcheck"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
    assert_eq!(actual, want, "{name} differs; rerun with BLESS=1 if intended");
}

/// JSON with the platform-dependent fingerprint blanked.
fn normalized(text: &str) -> String {
    let mut v: Value = serde_json::from_str(text).unwrap();
    if v.get("fingerprint").is_some() {
        v["fingerprint"] = Value::from("-");
    }
    serde_json::to_string_pretty(&v).unwrap() + "\n"
}

const BAD: &str = "shared S; proc t { local q; data u; q = S; u = q->data; }\n";

const RACY: &str = "shared S; proc init { local n; n = malloc; S = n; }
proc writer { local n, q; n = malloc; atomic { q = S; S = n; } enter retire(q); exit retire; }
proc reader { local p; data u; p = S; u = p->data; }
";

#[test]
fn typecheck_corpus_queue() {
    let o = smrcheck(&["typecheck", "--program", "corpus/msqueue_hp.prog", "--smr", "hp2"]);
    assert_eq!(code(&o), 0);
    golden("typecheck_msqueue_hp.txt", &stdout(&o));
}

#[test]
fn typecheck_failure_names_rule() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.prog");
    std::fs::write(&f, BAD).unwrap();
    let o = smrcheck(&["typecheck", "--program", f.to_str().unwrap(), "--smr", "ebr", "--json"]);
    assert_eq!(code(&o), 1);
    let text = stdout(&o);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["failure"]["rule"], "ASSIGN5");
    assert_eq!(v["failure"]["var"], "q");
    golden("typecheck_bad.json", &text);
    let o = smrcheck(&["typecheck", "--program", f.to_str().unwrap(), "--smr", "ebr"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("ASSIGN5: q"), "{}", stdout(&o));
}

#[test]
fn safeloc_of_ebr() {
    let o = smrcheck(&["automaton", "safeloc", "--smr", "ebr", "--json"]);
    assert_eq!(code(&o), 0);
    golden("safeloc_ebr.json", &stdout(&o));
    let o = smrcheck(&["automaton", "locations", "--smr", "hp2", "--no-base"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 20);
}

#[test]
fn explore_finds_use_after_free() {
    let o = smrcheck(&["explore", "--program", "corpus/micro/use_after_retire.prog", "--smr", "ebr", "--frees", "--json"]);
    assert_eq!(code(&o), 1);
    golden("explore_use_after_retire.json", &normalized(&stdout(&o)));
    let o = smrcheck(&["explore", "--program", "corpus/treiber_ebr.prog", "--smr", "ebr", "--steps", "12"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn instrument_writes_a_parsable_program() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.prog");
    let o = smrcheck(&["instrument", "--program", "corpus/msqueue_ebr.prog", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("assert("));
    assert!(!text.contains("@inv"));
    smrcheck::lang::parse_program(&text).unwrap();
}

#[test]
fn repair_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = smrcheck::corpus::structure("msqueue_hp").unwrap().source.replacen("@inv active(head);", "", 1);
    let input = dir.path().join("in.prog");
    let fixed = dir.path().join("out.prog");
    std::fs::write(&input, src).unwrap();
    let o = smrcheck(&[
        "typecheck", "--program", input.to_str().unwrap(), "--smr", "hp2", "--repair", "--out", fixed.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let log = String::from_utf8(o.stderr).unwrap();
    let entries: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.last().unwrap()["verdict"], "typed");
    let o = smrcheck(&["typecheck", "--program", fixed.to_str().unwrap(), "--smr", "hp2"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn repair_gives_up_on_a_race() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("racy.prog");
    std::fs::write(&f, RACY).unwrap();
    let o = smrcheck(&["repair", "--program", f.to_str().unwrap(), "--smr", "ebr"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&smrcheck(&["frob"])), 2);
    assert_eq!(code(&smrcheck(&["typecheck", "--program", "no/such.prog"])), 2);
    assert_eq!(code(&smrcheck(&["typecheck", "--program", "corpus/treiber_hp.prog", "--smr", "nope"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("garbage.prog");
    std::fs::write(&f, "proc {").unwrap();
    assert_eq!(code(&smrcheck(&["typecheck", "--program", f.to_str().unwrap()])), 2);
}

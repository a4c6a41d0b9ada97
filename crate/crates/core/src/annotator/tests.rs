use proptest::prelude::*;

use super::*;
use crate::automata::load_builtin;
use crate::corpus::structure;
use crate::lang::{parse_program, pretty_print};

fn budget() -> Budget {
    Budget::default()
}

fn typed(p: &Program, smr: &str) -> bool {
    let o = load_builtin(smr, true).unwrap();
    let t = SafeCallTable::from_automaton(&o);
    typecheck(p, &TypeContext::new(o), &t).unwrap().ok()
}

fn strip_lines(src: &str, pred: impl Fn(&str) -> bool) -> String {
    src.lines().filter(|l| !pred(l.trim())).collect::<Vec<_>>().join("\n")
}

#[test]
fn splice_tracks_paths() {
    let p = parse_program("shared S; proc t { local p, q; p = S; atomic { q = p; p = q; } }").unwrap();
    let mut body = p.procs[0].body.clone();
    let cmds = commands(&body);
    let (target, _) = cmds.iter().find(|(_, c)| c.to_string() == "p = q").unwrap().clone();
    let first = cmds[0].0.clone();
    let mut track = target.clone();
    let edits = [
        Edit { path: first, com: Command::InvActivePtr("p".into()), before: false, wrap: true },
        Edit { path: target, com: Command::InvActivePtr("q".into()), before: true, wrap: false },
    ];
    let inserted = apply(&mut body, &edits, &mut track);
    assert_eq!(body.at(&track), Some(&Stmt::Com(Command::PtrAssign("p".into(), "q".into()))));
    assert_eq!(body.at(&inserted[0]), Some(&Stmt::Com(Command::InvActivePtr("p".into()))));
    assert_eq!(body.at(&inserted[1]), Some(&Stmt::Com(Command::InvActivePtr("q".into()))));
    let printed = crate::lang::print_stmt(&body);
    assert!(printed.contains("atomic {"), "{printed}");
}

#[test]
fn msqueue_hp_protection_is_restored() {
    let full = structure("msqueue_hp").unwrap();
    let src = full.source.replacen("@inv active(head);", "", 1);
    let p = parse_program(&src).unwrap();
    assert!(!typed(&p, "hp2"));
    let o = load_builtin("hp2", true).unwrap();
    let r = repair(&p, &o, &budget(), 4);
    assert!(r.repaired, "{}", r.log_jsonl());
    assert!(typed(&r.program, "hp2"));
    assert!(same_skeleton(&r.program, &p));
    // the guess right before the dereference is refuted, the protection site is not
    let log = r.log_jsonl();
    assert!(log.contains("\"refuted\""), "{log}");
    assert!(log.contains("active-after-protect"), "{log}");
}

#[test]
fn msqueue_ebr_angel_template_is_reinserted() {
    let full = structure("msqueue_ebr").unwrap();
    let src = strip_lines(full.source, |l| {
        l == "angel r;" || l == "@inv angel r;" || l == "@inv active(r);" || (l.starts_with("@inv") && l.ends_with(" in r;"))
    });
    let p = parse_program(&src).unwrap();
    assert!(p.procs.iter().all(|q| q.angels.is_empty()));
    assert!(!typed(&p, "ebr"));
    let o = load_builtin("ebr", true).unwrap();
    let r = repair(&p, &o, &budget(), 12);
    assert!(r.repaired, "{}", r.log_jsonl());
    assert!(typed(&r.program, "ebr"));
    assert!(same_skeleton(&r.program, &p));
    let deq = r.program.proc("dequeue").unwrap();
    assert_eq!(deq.angels.len(), 1);
    let out = pretty_print(&r.program);
    assert!(out.contains("@inv angel r;"), "{out}");
    assert!(out.contains("@inv active(r);"), "{out}");
    assert!(out.contains("@inv head in r;"), "{out}");
}

const RACY: &str = r#"
shared S, Null;
proc init { local n; n = malloc; S = n; }
proc writer { local n, q; n = malloc; atomic { q = S; S = n; } enter retire(q); exit retire; }
proc reader { local p; data u; p = S; u = p->data; }
"#;

#[test]
fn racy_program_is_not_repaired() {
    let p = parse_program(RACY).unwrap();
    let o = load_builtin("ebr", true).unwrap();
    let r = repair(&p, &o, &budget(), 6);
    assert!(!r.repaired, "{}", r.log_jsonl());
    assert!(!typed(&r.program, "ebr"));
    let last: Value = serde_json::from_str(r.log_jsonl().lines().last().unwrap()).unwrap();
    assert_eq!(last["verdict"], "no-candidate");
}

#[test]
fn typed_input_is_left_alone() {
    let e = structure("treiber_ebr").unwrap();
    let p = e.program();
    let r = repair(&p, &load_builtin("ebr", true).unwrap(), &budget(), 3);
    assert!(r.repaired);
    assert_eq!(r.rounds, 0);
    assert_eq!(r.program, p);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn repair_only_adds_annotations(mask in 0u32..(1 << 8)) {
        // drop a subset of the active annotations of the HP queue
        let src = structure("msqueue_hp").unwrap().source;
        let mut k = 0;
        let mut out = String::new();
        for line in src.lines() {
            let ann = line.trim().starts_with("@inv active(");
            if ann {
                k += 1;
            }
            if !(ann && k <= 8 && mask & (1 << (k - 1)) != 0) {
                out.push_str(line);
                out.push('\n');
            }
        }
        let p = parse_program(&out).unwrap();
        let small = Budget { steps: 12, ..budget() };
        let r = repair(&p, &load_builtin("hp2", true).unwrap(), &small, 2);
        prop_assert!(same_skeleton(&r.program, &p));
    }
}

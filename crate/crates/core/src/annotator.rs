//! Invariant repair: insert annotations at the first type failure, keep those
//! that move the failure and that the explorer cannot refute.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::automata::{EventKind, SmrAutomaton};
use crate::inference::{typecheck, Failure};
use crate::instrument::instrument;
use crate::lang::{preprocess, Command, Program, ProgramPoint, Stmt};
use crate::oracle::{explore, Budget, Mode};
use crate::rules::SafeCallTable;
use crate::types::TypeContext;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tactic {
    /// `@inv active(v)` right before the failing command.
    ActiveBefore,
    /// `@inv active(v)` right after the protection of `v` ends.
    ActiveAfterProtect,
    /// Angel template around the last critical region, membership of `v`.
    Angel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Accepted,
    /// The type failure did not move.
    NoProgress,
    /// The instrumented program violates an assertion.
    Refuted,
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct Attempt {
    pub round: usize,
    pub tactic: Tactic,
    pub edits: Vec<String>,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Repair {
    pub program: Program,
    pub repaired: bool,
    pub rounds: usize,
    pub log: Vec<Value>,
}

impl Repair {
    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for v in &self.log {
            s.push_str(&v.to_string());
            s.push('\n');
        }
        s
    }
}

/// One insertion; `before` puts it in front of the node at `path`.
#[derive(Clone, Debug)]
struct Edit {
    path: Vec<u32>,
    com: Command,
    before: bool,
    /// Open a fresh atomic block around the node and the annotation.
    wrap: bool,
}

struct Candidate {
    tactic: Tactic,
    proc: usize,
    edits: Vec<Edit>,
    new_angel: Option<String>,
}

fn preorder(s: &Stmt, path: &mut Vec<u32>, out: &mut Vec<(Vec<u32>, Command)>) {
    match s {
        Stmt::Com(c) => out.push((path.clone(), c.clone())),
        Stmt::Seq(a, b) | Stmt::Choice(a, b) => {
            path.push(0);
            preorder(a, path, out);
            path.pop();
            path.push(1);
            preorder(b, path, out);
            path.pop();
        }
        Stmt::Loop(a) => {
            path.push(0);
            preorder(a, path, out);
            path.pop();
        }
    }
}

fn commands(s: &Stmt) -> Vec<(Vec<u32>, Command)> {
    let mut out = Vec::new();
    preorder(s, &mut Vec::new(), &mut out);
    out
}

/// Whether the node at `path` sits strictly inside an atomic block.
fn in_atomic(body: &Stmt, path: &[u32]) -> bool {
    enclosing_atomic(body, path).is_some()
}

fn enclosing_atomic(body: &Stmt, path: &[u32]) -> Option<Vec<u32>> {
    (0..path.len())
        .rev()
        .map(|k| &path[..k])
        .find(|pre| body.at(pre).is_some_and(|s| s.as_atomic().is_some()))
        .map(|p| p.to_vec())
}

/// Apply `e`; returns where the old node moved and where the annotation went.
fn splice(body: &mut Stmt, e: &Edit) -> (Vec<u32>, Vec<u32>) {
    let node = body.at_mut(&e.path).expect("edit path exists");
    let old = std::mem::replace(node, Stmt::skip());
    let ann = Stmt::Com(e.com.clone());
    let (inner, old_at, ann_at): (Stmt, &[u32], &[u32]) = if e.before {
        (Stmt::seq(ann, old), &[1], &[0])
    } else {
        (Stmt::seq(old, ann), &[0], &[1])
    };
    let (new, prefix): (Stmt, &[u32]) = if e.wrap {
        (Stmt::atomic(inner), &[1, 0])
    } else {
        (inner, &[])
    };
    *node = new;
    let at = |tail: &[u32]| [&e.path[..], prefix, tail].concat();
    (at(old_at), at(ann_at))
}

fn moved(p: &[u32], from: &[u32], to: &[u32]) -> Vec<u32> {
    if p.starts_with(from) {
        [to, &p[from.len()..]].concat()
    } else {
        p.to_vec()
    }
}

/// Apply the edits in order, keeping later paths and `track` current.
fn apply(body: &mut Stmt, edits: &[Edit], track: &mut Vec<u32>) -> Vec<Vec<u32>> {
    let mut pending: Vec<Edit> = edits.to_vec();
    let mut inserted: Vec<Vec<u32>> = Vec::new();
    for i in 0..pending.len() {
        let e = pending[i].clone();
        let (old, ann) = splice(body, &e);
        for later in &mut pending[i + 1..] {
            later.path = moved(&later.path, &e.path, &old);
        }
        for p in &mut inserted {
            *p = moved(p, &e.path, &old);
        }
        *track = moved(track, &e.path, &old);
        inserted.push(ann);
    }
    inserted
}

/// Equal up to annotations, once bare commands sit in their own atomic blocks.
pub fn same_skeleton(a: &Program, b: &Program) -> bool {
    preprocess(&a.erase_annotations()) == preprocess(&b.erase_annotations())
}

fn fresh(prog: &Program, proc: usize, base: &str) -> String {
    let p = &prog.procs[proc];
    (0..)
        .map(|i| if i == 0 { base.to_string() } else { format!("{base}{i}") })
        .find(|n| prog.kind_of(p, n).is_none())
        .unwrap()
}

fn has_event(o: &SmrAutomaton, f: impl Fn(&str) -> bool) -> bool {
    o.events.iter().any(|e| e.kind == EventKind::Enter && f(&e.func))
}

fn candidates(prog: &Program, o: &SmrAutomaton, f: &Failure) -> Vec<Candidate> {
    let Some(pi) = prog.procs.iter().position(|p| p.name == f.at.proc) else {
        return vec![];
    };
    let p = &prog.procs[pi];
    let v = f.diagnostic.var.clone();
    if !prog.kind_of(p, &v).is_some_and(|k| k.is_pointer()) {
        return vec![];
    }
    let cmds = commands(&p.body);
    let Some(idx) = cmds.iter().position(|(path, _)| *path == f.at.path) else {
        return vec![];
    };
    let mut out = vec![Candidate {
        tactic: Tactic::ActiveBefore,
        proc: pi,
        edits: vec![Edit {
            path: f.at.path.clone(),
            com: Command::InvActivePtr(v.clone()),
            before: true,
            wrap: !in_atomic(&p.body, &f.at.path),
        }],
        new_angel: None,
    }];
    if has_event(o, |n| n.starts_with("protect")) {
        // protection sites of v, nearest first
        let exits = cmds[..idx].windows(2).filter_map(|w| match (&w[0].1, &w[1].1) {
            (Command::Enter(g, ps, _), Command::Exit(h)) if g == h && g.starts_with("protect") && ps.contains(&v) => {
                Some(w[1].0.clone())
            }
            _ => None,
        });
        let mut exits: Vec<Vec<u32>> = exits.collect();
        exits.reverse();
        for e in exits {
            out.push(Candidate {
                tactic: Tactic::ActiveAfterProtect,
                proc: pi,
                edits: vec![Edit {
                    wrap: !in_atomic(&p.body, &e),
                    path: e,
                    com: Command::InvActivePtr(v.clone()),
                    before: false,
                }],
                new_angel: None,
            });
        }
    }
    if has_event(o, |n| n == "leaveQ") {
        let member = |r: &str| Edit {
            path: f.at.path.clone(),
            com: Command::InvMember(v.clone(), r.to_string()),
            before: true,
            wrap: false,
        };
        let leave = cmds[..idx]
            .iter()
            .rposition(|(_, c)| matches!(c, Command::Enter(g, ..) if g == "leaveQ"));
        let declared = cmds[..idx].iter().rev().find_map(|(_, c)| match c {
            Command::InvAngel(r) => Some(r.clone()),
            _ => None,
        });
        match (declared, leave) {
            (Some(r), _) => out.push(Candidate {
                tactic: Tactic::Angel,
                proc: pi,
                edits: vec![member(&r)],
                new_angel: None,
            }),
            (None, Some(li)) => {
                let r = fresh(prog, pi, "r");
                let enter = &cmds[li].0;
                let block = enclosing_atomic(&p.body, enter).unwrap_or_else(|| enter.clone());
                let mut edits = vec![Edit {
                    path: block,
                    com: Command::InvAngel(r.clone()),
                    before: true,
                    wrap: false,
                }];
                let exit = cmds[li..idx]
                    .iter()
                    .find(|(_, c)| matches!(c, Command::Exit(g) if g == "leaveQ"));
                if let Some((path, _)) = exit {
                    edits.push(Edit {
                        path: path.clone(),
                        com: Command::InvActiveAngel(r.clone()),
                        before: false,
                        wrap: !in_atomic(&p.body, path),
                    });
                }
                edits.push(member(&r));
                out.push(Candidate {
                    tactic: Tactic::Angel,
                    proc: pi,
                    edits,
                    new_angel: Some(r),
                });
            }
            (None, None) => {}
        }
    }
    out
}

enum Check {
    Typed,
    Stuck,
    Error(String),
}

fn first_failure(prog: &Program, ctx: &Arc<TypeContext>, table: &SafeCallTable) -> Result<Option<Failure>, String> {
    typecheck(prog, ctx, table)
        .map(|r| r.failure().cloned())
        .map_err(|e| e.to_string())
}

/// Insert annotations into `prog` until it typechecks under `o`, for at most
/// `max_rounds` rounds. Every accepted annotation survives exploration of the
/// instrumented program within `budget` (frees are switched off).
pub fn repair(prog: &Program, o: &SmrAutomaton, budget: &Budget, max_rounds: usize) -> Repair {
    repair_streaming(prog, o, budget, max_rounds, &mut |_| {})
}

fn note(log: &mut Vec<Value>, emit: &mut dyn FnMut(&Value), v: Value) {
    emit(&v);
    log.push(v);
}

/// [`repair`], handing each log entry to `emit` as soon as it is written.
pub fn repair_streaming(
    prog: &Program,
    o: &SmrAutomaton,
    budget: &Budget,
    max_rounds: usize,
    emit: &mut dyn FnMut(&Value),
) -> Repair {
    let ctx = TypeContext::new(o.clone());
    let table = SafeCallTable::from_automaton(o);
    let budget = Budget {
        free: 0,
        reuse: 0,
        ..budget.clone()
    };
    let mut cur = prog.clone();
    let mut log = Vec::new();
    let mut round = 0;
    loop {
        let failure = match first_failure(&cur, &ctx, &table) {
            Ok(None) => {
                note(&mut log, emit, json!({ "event": "done", "verdict": "typed", "rounds": round }));
                return Repair { program: cur, repaired: true, rounds: round, log };
            }
            Ok(Some(f)) => f,
            Err(e) => {
                note(&mut log, emit, json!({ "event": "done", "verdict": "error", "rounds": round, "detail": e }));
                return Repair { program: cur, repaired: false, rounds: round, log };
            }
        };
        if round == max_rounds {
            note(&mut log, emit, json!({ "event": "done", "verdict": "out-of-rounds", "rounds": round }));
            return Repair { program: cur, repaired: false, rounds: round, log };
        }
        round += 1;
        note(&mut log, emit, json!({ "event": "failure", "round": round, "failure": failure }));
        let mut next = None;
        for c in candidates(&cur, o, &failure) {
            let mut cand = cur.clone();
            let body = &mut cand.procs[c.proc].body;
            let mut track = failure.at.path.clone();
            let inserted = apply(body, &c.edits, &mut track);
            if let Some(r) = &c.new_angel {
                cand.procs[c.proc].angels.push(r.clone());
            }
            let pname = &cand.procs[c.proc].name;
            let edits: Vec<String> = c
                .edits
                .iter()
                .zip(&inserted)
                .map(|(e, at)| format!("{} @ {}", e.com, ProgramPoint::new(pname, at.clone())))
                .collect();
            let check = match first_failure(&cand, &ctx, &table) {
                Err(e) => Check::Error(e),
                Ok(None) => Check::Typed,
                Ok(Some(g)) => {
                    let same = g.at.proc == *pname && (g.at.path == track || inserted.contains(&g.at.path));
                    if same {
                        Check::Stuck
                    } else {
                        Check::Typed
                    }
                }
            };
            let (outcome, detail) = match check {
                Check::Error(e) => (Outcome::Error, Some(e)),
                Check::Stuck => (Outcome::NoProgress, None),
                Check::Typed => match explore(&instrument(&cand), o, &budget, Mode::Asserts) {
                    Err(e) => (Outcome::Error, Some(e.to_string())),
                    Ok(r) if r.clean() => (Outcome::Accepted, None),
                    Ok(r) => (Outcome::Refuted, Some(r.render())),
                },
            };
            let attempt = Attempt {
                round,
                tactic: c.tactic,
                edits,
                outcome,
                detail,
            };
            let mut v = serde_json::to_value(&attempt).expect("attempt serializes");
            v["event"] = json!("attempt");
            note(&mut log, emit, v);
            if outcome == Outcome::Accepted {
                next = Some(cand);
                break;
            }
        }
        match next {
            Some(p) => cur = p,
            None => {
                note(&mut log, emit, json!({ "event": "done", "verdict": "no-candidate", "rounds": round }));
                return Repair { program: cur, repaired: false, rounds: round, log };
            }
        }
    }
}

#[cfg(test)]
mod tests;

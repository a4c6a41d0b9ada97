//! Compile SMR commands and invariant annotations into assertions and ghost
//! state, for checking under garbage-collected semantics.

use crate::lang::{Command, Cond, Program, Stmt};

pub const RETIRE_PTR: &str = "retire_ptr";
pub const RETIRE_FLAG: &str = "retire_flag";

pub fn included(r: &str) -> String {
    format!("included_{r}")
}

pub fn failed(r: &str) -> String {
    format!("failed_{r}")
}

fn set(u: String, v: bool) -> Stmt {
    Stmt::Com(Command::DataOp(u, if v { "true" } else { "false" }.into(), vec![]))
}

fn com(c: Command) -> Stmt {
    Stmt::Com(c)
}

fn translate(c: &Command) -> Stmt {
    use Command::*;
    match c {
        Enter(f, ps, _) if f == "retire" && ps.len() == 1 => Stmt::choice(
            Stmt::skip(),
            Stmt::seq(
                com(PtrAssign(RETIRE_PTR.into(), ps[0].clone())),
                set(RETIRE_FLAG.into(), true),
            ),
        ),
        Enter(..) | Exit(_) => Stmt::skip(),
        InvEq(p, q) => com(Assert(Cond::PtrEq(p.clone(), q.clone()))),
        InvActivePtr(p) => com(Assert(Cond::or(
            Cond::not(Cond::Data(RETIRE_FLAG.into())),
            Cond::PtrNeq(RETIRE_PTR.into(), p.clone()),
        ))),
        InvAngel(r) => Stmt::seq_all(vec![
            com(Havoc(r.clone())),
            set(included(r), false),
            set(failed(r), false),
        ]),
        InvMember(q, r) => Stmt::choice(
            Stmt::skip(),
            Stmt::seq_all(vec![
                com(AssumeEq(q.clone(), r.clone())),
                com(Assert(Cond::not(Cond::Data(failed(r))))),
                set(included(r), true),
            ]),
        ),
        InvActiveAngel(r) => Stmt::choice(
            Stmt::skip(),
            Stmt::seq_all(vec![
                com(AssumeCond(Cond::and(
                    Cond::Data(RETIRE_FLAG.into()),
                    Cond::PtrEq(RETIRE_PTR.into(), r.clone()),
                ))),
                com(Assert(Cond::not(Cond::Data(included(r))))),
                set(failed(r), true),
            ]),
        ),
        other => com(other.clone()),
    }
}

/// The instrumented program: no SMR commands and no annotations remain;
/// angels become local pointers and ghost variables are declared.
pub fn instrument(prog: &Program) -> Program {
    let mut out = prog.clone();
    let uses_retire = prog.procs.iter().any(|p| {
        p.body
            .commands()
            .iter()
            .any(|c| matches!(c, Command::Enter(f, ..) if f == "retire") || matches!(c, Command::InvActivePtr(_) | Command::InvActiveAngel(_)))
    });
    if uses_retire {
        if !out.shared.iter().any(|v| v == RETIRE_PTR) {
            out.shared.push(RETIRE_PTR.into());
        }
        if !out.shared_data.iter().any(|v| v == RETIRE_FLAG) {
            out.shared_data.push(RETIRE_FLAG.into());
        }
    }
    for p in &mut out.procs {
        p.body = p.body.map_commands(&mut |c| translate(c));
        for r in std::mem::take(&mut p.angels) {
            p.data.push(included(&r));
            p.data.push(failed(&r));
            p.locals.push(r);
        }
    }
    out
}

/// `|F(P)| / |P|` in statement nodes.
pub fn size_ratio(prog: &Program) -> f64 {
    let n = prog.size().max(1);
    instrument(prog).size() as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_program, pretty_print, validate};

    fn one(src: &str) -> Stmt {
        let p = parse_program(&format!(
            "shared Head; proc t {{ local p, q; angel r; @inv angel r; {src} }}"
        ))
        .unwrap();
        let body = instrument(&p).procs[0].body.clone();
        match body {
            Stmt::Seq(_, rest) => *rest,
            other => other,
        }
    }

    #[test]
    fn rows() {
        assert_eq!(one("@inv p == q;"), com(Command::Assert(Cond::PtrEq("p".into(), "q".into()))));
        let r = one("enter retire(q);");
        assert_eq!(
            r,
            Stmt::choice(
                Stmt::skip(),
                Stmt::seq(
                    com(Command::PtrAssign("retire_ptr".into(), "q".into())),
                    set("retire_flag".into(), true)
                )
            )
        );
        assert_eq!(one("exit retire;"), Stmt::skip());
        assert_eq!(one("enter leaveQ();"), Stmt::skip());
        let printed = crate::lang::print_stmt(&one("@inv active(p);"));
        assert_eq!(printed.trim(), "assert(!retire_flag || retire_ptr != p);");
        let printed = crate::lang::print_stmt(&one("@inv active(r);"));
        assert!(printed.contains("assume(retire_flag && retire_ptr == r);"));
        assert!(printed.contains("assert(!included_r);"));
        let printed = crate::lang::print_stmt(&one("@inv p in r;"));
        assert!(printed.contains("assume(p == r);"));
        assert!(printed.contains("included_r = true;"));
    }

    #[test]
    fn output_is_well_formed_and_reparses() {
        let src = "struct Node { data; next; } shared Head; proc t { local p; angel r; @inv angel r; p = Head; @inv p in r; enter retire(p); @inv active(r); @inv active(p); }";
        let p = parse_program(src).unwrap();
        let f = instrument(&p);
        validate(&f).unwrap();
        assert!(f.procs[0].angels.is_empty());
        assert!(f.procs[0].body.commands().iter().all(|c| !c.is_annotation() && !matches!(c, Command::Enter(..) | Command::Exit(_))));
        let again = parse_program(&pretty_print(&f)).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn identity_without_smr() {
        let p = parse_program("shared Head; proc t { local p; data u; p = Head; u = p->data; }").unwrap();
        assert_eq!(instrument(&p), p);
        assert_eq!(size_ratio(&p), 1.0);
    }

    #[test]
    fn stress_ratio_is_bounded() {
        let mut body = String::from("@inv angel r; ");
        for _ in 0..20 {
            body.push_str("@inv p in r; @inv active(r); @inv active(p); @inv p == q; enter retire(p); ");
        }
        let p = parse_program(&format!("shared Head; proc t {{ local p, q; angel r; {body} }}")).unwrap();
        let ratio = size_ratio(&p);
        assert!(ratio > 1.0 && ratio <= 8.0, "{ratio}");
    }
}

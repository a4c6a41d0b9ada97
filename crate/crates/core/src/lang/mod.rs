//! The concurrent core language: AST, parser, printer and program transformations.

mod ast;
mod parser;
mod printer;

use std::collections::{BTreeSet, HashMap};

pub use ast::*;
pub use parser::parse_program;
pub use printer::{pretty_print, print_stmt};

#[allow(unused_imports)]
pub(crate) use parser::{describe, lex, Cursor, Tok};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LangError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undeclared variable `{name}`")]
    Undeclared { line: usize, col: usize, name: String },
    #[error("{line}:{col}: `{name}` is {found}, expected {expected}")]
    KindMismatch {
        line: usize,
        col: usize,
        name: String,
        found: &'static str,
        expected: String,
    },
    #[error("angel `{name}` must be local, not shared")]
    SharedAngel { name: String },
    #[error("procedure `{proc}`: angel `{name}` may be used before `@inv angel {name}`")]
    AngelNotAllocated { proc: String, name: String },
    #[error("procedure `{proc}`: {msg}")]
    Atomic { proc: String, msg: String },
}

/// Structural checks that the parser cannot do locally.
pub fn validate(prog: &Program) -> Result<(), LangError> {
    for p in &prog.procs {
        let mut vars = Vec::new();
        for c in p.body.commands() {
            vars.extend(c.vars());
        }
        for v in vars {
            if prog.kind_of(p, &v).is_none() {
                return Err(LangError::Undeclared {
                    line: 0,
                    col: 0,
                    name: v,
                });
            }
        }
        atomic_depth(&p.body, 0).map_err(|msg| LangError::Atomic {
            proc: p.name.clone(),
            msg,
        })
        .and_then(|d| {
            if d == 0 {
                Ok(())
            } else {
                Err(LangError::Atomic {
                    proc: p.name.clone(),
                    msg: "atomic block left open".into(),
                })
            }
        })?;
        let mut allocated = BTreeSet::new();
        angel_dominance(&p.body, &mut allocated).map_err(|name| LangError::AngelNotAllocated {
            proc: p.name.clone(),
            name,
        })?;
    }
    Ok(())
}

fn atomic_depth(s: &Stmt, depth: u32) -> Result<u32, String> {
    match s {
        Stmt::Com(Command::BeginAtomic) => {
            if depth > 0 {
                Err("nested atomic blocks are not supported".into())
            } else {
                Ok(1)
            }
        }
        Stmt::Com(Command::EndAtomic) => {
            if depth == 0 {
                Err("`end_atomic` without matching begin".into())
            } else {
                Ok(0)
            }
        }
        Stmt::Com(_) => Ok(depth),
        Stmt::Seq(a, b) => {
            let d = atomic_depth(a, depth)?;
            atomic_depth(b, d)
        }
        Stmt::Choice(a, b) => {
            let da = atomic_depth(a, depth)?;
            let db = atomic_depth(b, depth)?;
            if da != db {
                Err("choice branches leave different atomic nesting".into())
            } else {
                Ok(da)
            }
        }
        Stmt::Loop(a) => {
            if atomic_depth(a, depth)? != depth {
                Err("loop body changes atomic nesting".into())
            } else {
                Ok(depth)
            }
        }
    }
}

fn angel_dominance(s: &Stmt, alloc: &mut BTreeSet<String>) -> Result<(), String> {
    match s {
        Stmt::Com(c) => {
            match c {
                Command::InvAngel(r) => {
                    alloc.insert(r.clone());
                }
                Command::InvMember(_, r) | Command::InvActiveAngel(r) => {
                    if !alloc.contains(r) {
                        return Err(r.clone());
                    }
                }
                _ => {}
            }
            Ok(())
        }
        Stmt::Seq(a, b) => {
            angel_dominance(a, alloc)?;
            angel_dominance(b, alloc)
        }
        Stmt::Choice(a, b) => {
            let mut la = alloc.clone();
            let mut lb = alloc.clone();
            angel_dominance(a, &mut la)?;
            angel_dominance(b, &mut lb)?;
            *alloc = la.intersection(&lb).cloned().collect();
            Ok(())
        }
        Stmt::Loop(a) => {
            let mut inner = alloc.clone();
            angel_dominance(a, &mut inner)
        }
    }
}

/// Path in the preprocessed body mapped to the path of the originating command.
pub type OriginMap = HashMap<Vec<u32>, Vec<u32>>;

/// Wrap top-level commands into atomic blocks and every primitive command into
/// `(skip; com); skip`.
pub fn preprocess(prog: &Program) -> Program {
    preprocess_mapped(prog).0
}

/// Like [`preprocess`], also returning per-procedure origin maps.
pub fn preprocess_mapped(prog: &Program) -> (Program, Vec<OriginMap>) {
    let mut out = prog.clone();
    let mut maps = Vec::new();
    for p in &mut out.procs {
        let mut map = HashMap::new();
        let mut here = Vec::new();
        let (body, _) = pp(&p.body, 0, &mut Vec::new(), &mut here, &mut map);
        p.body = body;
        maps.push(map);
    }
    (out, maps)
}

fn skip_wrapped(s: &Stmt) -> Option<&Command> {
    if let Stmt::Seq(a, b) = s {
        if let (Stmt::Seq(x, c), Stmt::Com(Command::Skip)) = (&**a, &**b) {
            if let (Stmt::Com(Command::Skip), Stmt::Com(c)) = (&**x, &**c) {
                return Some(c);
            }
        }
    }
    None
}

fn wrap(c: &Command) -> Stmt {
    Stmt::seq(
        Stmt::seq(Stmt::skip(), Stmt::Com(c.clone())),
        Stmt::skip(),
    )
}

/// `orig` is the path of `s` in the original tree, `here` its path in the output.
fn pp(
    s: &Stmt,
    depth: u32,
    orig: &mut Vec<u32>,
    here: &mut Vec<u32>,
    map: &mut OriginMap,
) -> (Stmt, u32) {
    match s {
        Stmt::Com(Command::BeginAtomic) => {
            map.insert(here.clone(), orig.clone());
            (s.clone(), 1)
        }
        Stmt::Com(Command::EndAtomic) => {
            map.insert(here.clone(), orig.clone());
            (s.clone(), 0)
        }
        Stmt::Com(_) | Stmt::Seq(..) if skip_wrapped(s).is_some() || matches!(s, Stmt::Com(_)) => {
            let c = match s {
                Stmt::Com(c) => c,
                _ => skip_wrapped(s).unwrap(),
            };
            let mut orig_c = orig.clone();
            if !matches!(s, Stmt::Com(_)) {
                orig_c.extend([0, 1]);
            }
            let unit = wrap(c);
            if depth == 0 {
                // begin; (unit; end)
                let mut at = here.clone();
                at.extend([1, 0, 0, 1]);
                map.insert(at, orig_c);
                (Stmt::atomic(unit), 0)
            } else {
                let mut at = here.clone();
                at.extend([0, 1]);
                map.insert(at, orig_c);
                (unit, depth)
            }
        }
        Stmt::Com(_) => unreachable!(),
        Stmt::Seq(a, b) => {
            orig.push(0);
            here.push(0);
            let (na, d) = pp(a, depth, orig, here, map);
            orig.pop();
            here.pop();
            orig.push(1);
            here.push(1);
            let (nb, d) = pp(b, d, orig, here, map);
            orig.pop();
            here.pop();
            (Stmt::seq(na, nb), d)
        }
        Stmt::Choice(a, b) => {
            orig.push(0);
            here.push(0);
            let (na, d) = pp(a, depth, orig, here, map);
            orig.pop();
            here.pop();
            orig.push(1);
            here.push(1);
            let (nb, _) = pp(b, depth, orig, here, map);
            orig.pop();
            here.pop();
            (Stmt::choice(na, nb), d)
        }
        Stmt::Loop(a) => {
            orig.push(0);
            here.push(0);
            let (na, _) = pp(a, depth, orig, here, map);
            orig.pop();
            here.pop();
            (Stmt::looped(na), depth)
        }
    }
}

/// Rename every non-shared variable `x` to `x_t`.
pub fn thread_index(prog: &Program, t: usize) -> Program {
    let mut out = prog.clone();
    for p in &mut out.procs {
        let rename: HashMap<String, String> = p
            .locals
            .iter()
            .chain(p.data.iter())
            .chain(p.angels.iter())
            .map(|v| (v.clone(), format!("{v}_{t}")))
            .collect();
        let r = |v: &String| rename.get(v).cloned().unwrap_or_else(|| v.clone());
        for v in p.locals.iter_mut().chain(p.data.iter_mut()).chain(p.angels.iter_mut()) {
            *v = r(v);
        }
        p.body = p
            .body
            .map_commands(&mut |c| Stmt::Com(rename_command(c, &r)));
    }
    out
}

pub(crate) fn rename_cond(c: &Cond, r: &impl Fn(&String) -> String) -> Cond {
    match c {
        Cond::True => Cond::True,
        Cond::PtrEq(p, q) => Cond::PtrEq(r(p), r(q)),
        Cond::PtrNeq(p, q) => Cond::PtrNeq(r(p), r(q)),
        Cond::Data(u) => Cond::Data(r(u)),
        Cond::Not(a) => Cond::not(rename_cond(a, r)),
        Cond::And(a, b) => Cond::and(rename_cond(a, r), rename_cond(b, r)),
        Cond::Or(a, b) => Cond::or(rename_cond(a, r), rename_cond(b, r)),
    }
}

pub(crate) fn rename_command(c: &Command, r: &impl Fn(&String) -> String) -> Command {
    use Command::*;
    match c {
        Skip => Skip,
        PtrAssign(a, b) => PtrAssign(r(a), r(b)),
        PtrLoad(a, b) => PtrLoad(r(a), r(b)),
        PtrStore(a, b) => PtrStore(r(a), r(b)),
        DataLoad(a, b) => DataLoad(r(a), r(b)),
        DataStore(a, b) => DataStore(r(a), r(b)),
        DataOp(u, op, args) => DataOp(r(u), op.clone(), args.iter().map(r).collect()),
        Malloc(p) => Malloc(r(p)),
        AssumeEq(a, b) => AssumeEq(r(a), r(b)),
        AssumeNeq(a, b) => AssumeNeq(r(a), r(b)),
        AssumePred(n, args) => AssumePred(n.clone(), args.iter().map(r).collect()),
        BeginAtomic => BeginAtomic,
        EndAtomic => EndAtomic,
        Enter(f, ps, us) => Enter(f.clone(), ps.iter().map(r).collect(), us.iter().map(r).collect()),
        Exit(f) => Exit(f.clone()),
        InvAngel(x) => InvAngel(r(x)),
        InvEq(a, b) => InvEq(r(a), r(b)),
        InvMember(a, b) => InvMember(r(a), r(b)),
        InvActivePtr(x) => InvActivePtr(r(x)),
        InvActiveAngel(x) => InvActiveAngel(r(x)),
        Assert(c) => Assert(rename_cond(c, r)),
        AssumeCond(c) => AssumeCond(rename_cond(c, r)),
        Havoc(x) => Havoc(r(x)),
    }
}

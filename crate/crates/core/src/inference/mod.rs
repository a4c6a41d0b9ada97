//! Constraint generation over preprocessed procedures and the worklist solver.

use std::collections::VecDeque;

use serde::Serialize;
use serde_json::{json, Value};

use crate::lang::{preprocess_mapped, validate, Command, LangError, OriginMap, Program, ProgramPoint, Stmt};
use crate::rules::{sp, Diagnostic, RuleError, SafeCallTable, Scope, SpError};
use crate::types::{rm_transient, TypeContext, TypeEnv};

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintKind {
    /// `sp(X, com) ⊑ Y`; the path is the command's position in the body.
    Sp(Command, Vec<u32>),
    /// `X ⊑ Y`
    Id,
    /// `rm_transient(X) ⊑ Y` at the end of an atomic block.
    RmTransient(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub src: usize,
    pub dst: usize,
}

/// Constraints of one procedure; variable 0 is the entry, 1 the exit.
#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub proc: String,
    pub n_vars: usize,
    pub constraints: Vec<Constraint>,
    /// variable -> constraints reading it
    pub dep: Vec<Vec<usize>>,
    /// variable -> constraints bounding it
    pub req: Vec<Vec<usize>>,
}

impl ConstraintSystem {
    pub const ENTRY: usize = 0;
    pub const EXIT: usize = 1;

    pub fn build(proc: &str, body: &Stmt) -> ConstraintSystem {
        let mut cs = ConstraintSystem {
            proc: proc.to_string(),
            n_vars: 2,
            constraints: Vec::new(),
            dep: Vec::new(),
            req: Vec::new(),
        };
        let mut path = Vec::new();
        cs.gen(Self::ENTRY, body, Self::EXIT, &mut path);
        cs.dep = vec![Vec::new(); cs.n_vars];
        cs.req = vec![Vec::new(); cs.n_vars];
        for (i, c) in cs.constraints.iter().enumerate() {
            cs.dep[c.src].push(i);
            cs.req[c.dst].push(i);
        }
        cs
    }

    fn fresh(&mut self) -> usize {
        self.n_vars += 1;
        self.n_vars - 1
    }

    fn push(&mut self, kind: ConstraintKind, src: usize, dst: usize) {
        self.constraints.push(Constraint { kind, src, dst });
    }

    fn gen(&mut self, x: usize, s: &Stmt, y: usize, path: &mut Vec<u32>) {
        match s {
            Stmt::Com(Command::BeginAtomic) => self.push(ConstraintKind::Id, x, y),
            Stmt::Com(Command::EndAtomic) => self.push(ConstraintKind::RmTransient(path.clone()), x, y),
            Stmt::Com(c) => self.push(ConstraintKind::Sp(c.clone(), path.clone()), x, y),
            Stmt::Seq(a, b) => {
                let z = self.fresh();
                path.push(0);
                self.gen(x, a, z, path);
                path.pop();
                path.push(1);
                self.gen(z, b, y, path);
                path.pop();
            }
            Stmt::Choice(a, b) => {
                path.push(0);
                self.gen(x, a, y, path);
                path.pop();
                path.push(1);
                self.gen(x, b, y, path);
                path.pop();
            }
            Stmt::Loop(a) => {
                path.push(0);
                self.gen(y, a, y, path);
                path.pop();
                self.push(ConstraintKind::Id, x, y);
            }
        }
    }
}

/// Worklist discipline; the least solution does not depend on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Discipline {
    #[default]
    Fifo,
    Lifo,
}

#[derive(Clone, Debug)]
pub struct Solution {
    /// `None` for unreachable points.
    pub values: Vec<Option<TypeEnv>>,
    pub pops: usize,
    pub bound: usize,
    /// Per constraint, the first failed premise met while solving.
    pub premise: Vec<Option<Diagnostic>>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TypeError {
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("{point}: {err}")]
    Rule { point: String, err: RuleError },
}

fn transfer(
    ctx: &TypeContext,
    table: &SafeCallTable,
    scope: &Scope,
    c: &Constraint,
    x: &TypeEnv,
) -> Result<(TypeEnv, Option<Diagnostic>), RuleError> {
    match &c.kind {
        ConstraintKind::Id => Ok((x.clone(), None)),
        ConstraintKind::RmTransient(_) => Ok((rm_transient(x, ctx, |v| scope.is_shared(v)), None)),
        ConstraintKind::Sp(com, _) => match sp(ctx, table, scope, x, com) {
            Ok(e) => Ok((e, None)),
            Err(SpError::Premise(d)) => Ok((TypeEnv::Top, Some(d))),
            Err(SpError::Rule(e)) => Err(e),
        },
    }
}

/// Least solution by Kleene iteration from `init` at the entry.
pub fn solve(
    cs: &ConstraintSystem,
    ctx: &TypeContext,
    table: &SafeCallTable,
    scope: &Scope,
    init: TypeEnv,
    discipline: Discipline,
) -> Result<Solution, (usize, RuleError)> {
    let mut values: Vec<Option<TypeEnv>> = vec![None; cs.n_vars];
    values[ConstraintSystem::ENTRY] = Some(init);
    let mut queue: VecDeque<usize> = cs.dep[ConstraintSystem::ENTRY].iter().copied().collect();
    let mut queued = vec![false; cs.constraints.len()];
    for &c in &queue {
        queued[c] = true;
    }
    // chain height per variable: each of |Vars| types can grow through the
    // flags and location lattice, plus bottom and Top
    let n_env_vars = scope.vars().count();
    let height = n_env_vars * (ctx.aut.n_locations() + 4) + 2;
    let bound = cs.constraints.len() * (1 + height);
    let mut pops = 0;
    let mut premise = vec![None; cs.constraints.len()];
    while let Some(ci) = match discipline {
        Discipline::Fifo => queue.pop_front(),
        Discipline::Lifo => queue.pop_back(),
    } {
        queued[ci] = false;
        pops += 1;
        assert!(pops <= bound.max(1), "worklist exceeded its bound {bound}");
        let c = &cs.constraints[ci];
        let Some(x) = &values[c.src] else { continue };
        let (out, failed) = transfer(ctx, table, scope, c, x).map_err(|e| (ci, e))?;
        if premise[ci].is_none() {
            premise[ci] = failed;
        }
        let new = match &values[c.dst] {
            None => out,
            Some(old) => old.join(&out, ctx),
        };
        if values[c.dst].as_ref() != Some(&new) {
            values[c.dst] = Some(new);
            for &d in &cs.dep[c.dst] {
                if !queued[d] {
                    queued[d] = true;
                    queue.push_back(d);
                }
            }
        }
    }
    Ok(Solution { values, pops, bound, premise })
}

/// Every constraint holds under `sol`.
pub fn check_solution(
    cs: &ConstraintSystem,
    ctx: &TypeContext,
    table: &SafeCallTable,
    scope: &Scope,
    sol: &Solution,
) -> bool {
    cs.constraints.iter().all(|c| match &sol.values[c.src] {
        None => true,
        Some(x) => {
            let (out, _) = transfer(ctx, table, scope, c, x).unwrap();
            match &sol.values[c.dst] {
                None => false,
                Some(y) => crate::types::env_leq(&out, y, ctx).unwrap_or(false),
            }
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub point: String,
    pub origin: String,
    /// `origin` as a point in the unprocessed program.
    #[serde(skip)]
    pub at: ProgramPoint,
    pub command: String,
    #[serde(flatten)]
    pub diagnostic: Diagnostic,
}

#[derive(Clone, Debug)]
pub struct PointEnv {
    pub point: ProgramPoint,
    pub origin: ProgramPoint,
    pub command: String,
    /// Environment before the command; `None` if unreachable.
    pub env: Option<TypeEnv>,
}

#[derive(Clone, Debug)]
pub struct ProcReport {
    pub proc: String,
    pub points: Vec<PointEnv>,
    pub exit: Option<TypeEnv>,
    pub failure: Option<Failure>,
    pub pops: usize,
    pub bound: usize,
    pub constraints: usize,
}

#[derive(Clone, Debug)]
pub struct TypeReport {
    pub procs: Vec<ProcReport>,
}

impl TypeReport {
    pub fn ok(&self) -> bool {
        self.procs.iter().all(|p| p.failure.is_none())
    }

    pub fn failure(&self) -> Option<&Failure> {
        self.procs.iter().find_map(|p| p.failure.as_ref())
    }

    pub fn to_json(&self, ctx: &TypeContext) -> Value {
        let mut points = Vec::new();
        for p in &self.procs {
            for pt in &p.points {
                points.push(json!({
                    "point": pt.point.to_string(),
                    "origin": pt.origin.to_string(),
                    "command": pt.command,
                    "env": pt.env.as_ref().map(|e| e.to_json(ctx)).unwrap_or(Value::Null),
                }));
            }
            points.push(json!({
                "point": format!("{}:exit", p.proc),
                "env": p.exit.as_ref().map(|e| e.to_json(ctx)).unwrap_or(Value::Null),
            }));
        }
        let mut out = json!({
            "verdict": if self.ok() { "ok" } else { "fail" },
            "points": points,
        });
        if let Some(f) = self.failure() {
            out["failure"] = serde_json::to_value(f).unwrap();
        }
        out
    }

    /// Human-readable rendering with environments at atomic-block boundaries.
    pub fn render(&self, ctx: &TypeContext, verbose: bool) -> String {
        let mut s = String::new();
        for p in &self.procs {
            match &p.failure {
                None => s.push_str(&format!("proc {}: ok\n", p.proc)),
                Some(f) => s.push_str(&format!(
                    "proc {}: FAIL at {} (source {}) `{}`: {}\n",
                    p.proc, f.point, f.origin, f.command, f.diagnostic
                )),
            }
            if verbose {
                for pt in &p.points {
                    let env = pt.env.as_ref().map(|e| e.render(ctx)).unwrap_or_else(|| "unreachable".into());
                    s.push_str(&format!("  {:<14} {:<32} {{ {} }}\n", pt.origin.to_string(), pt.command, env));
                }
            }
        }
        s
    }
}

fn origin_of(map: &OriginMap, path: &[u32]) -> Vec<u32> {
    map.get(path).cloned().unwrap_or_else(|| path.to_vec())
}

/// Type-check every procedure of `prog` (not yet preprocessed).
pub fn typecheck(prog: &Program, ctx: &TypeContext, table: &SafeCallTable) -> Result<TypeReport, TypeError> {
    typecheck_with(prog, ctx, table, Discipline::Fifo)
}

pub fn typecheck_with(
    prog: &Program,
    ctx: &TypeContext,
    table: &SafeCallTable,
    discipline: Discipline,
) -> Result<TypeReport, TypeError> {
    validate(prog)?;
    let (pre, maps) = preprocess_mapped(prog);
    let mut procs = Vec::new();
    for (p, map) in pre.procs.iter().zip(&maps) {
        let scope = Scope::of(&pre, p);
        let cs = ConstraintSystem::build(&p.name, &p.body);
        let init = TypeEnv::initial(ctx, scope.vars().cloned());
        let point = |path: &[u32]| ProgramPoint {
            proc: p.name.clone(),
            path: path.to_vec(),
        };
        let sol = solve(&cs, ctx, table, &scope, init, discipline).map_err(|(ci, err)| {
            let path = match &cs.constraints[ci].kind {
                ConstraintKind::Sp(_, path) | ConstraintKind::RmTransient(path) => path.clone(),
                ConstraintKind::Id => Vec::new(),
            };
            TypeError::Rule {
                point: point(&origin_of(map, &path)).to_string(),
                err,
            }
        })?;
        let mut points = Vec::new();
        let mut failure = None;
        for (ci, c) in cs.constraints.iter().enumerate() {
            let ConstraintKind::Sp(com, path) = &c.kind else { continue };
            if matches!(com, Command::Skip) {
                continue;
            }
            let env = sol.values[c.src].clone();
            // a failure inside a loop floods its own input with Top, so the
            // premise is taken from the solver rather than re-checked here
            if failure.is_none() {
                if let Some(d) = sol.premise[ci].clone() {
                    failure = Some(Failure {
                        point: point(path).to_string(),
                        origin: point(&origin_of(map, path)).to_string(),
                        at: point(&origin_of(map, path)),
                        command: com.to_string(),
                        diagnostic: d,
                    });
                }
            }
            points.push(PointEnv {
                point: point(path),
                origin: point(&origin_of(map, path)),
                command: com.to_string(),
                env,
            });
        }
        let exit = sol.values[ConstraintSystem::EXIT].clone();
        procs.push(ProcReport {
            proc: p.name.clone(),
            points,
            exit,
            failure,
            pops: sol.pops,
            bound: sol.bound,
            constraints: cs.constraints.len(),
        });
    }
    Ok(TypeReport { procs })
}

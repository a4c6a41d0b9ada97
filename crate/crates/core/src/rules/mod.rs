//! Strongest post-conditions of primitive commands over type environments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::automata::{
    abstract_to_nfa, nfa_language_inclusion, AutomatonError, EventKind, SmrAutomaton, Sort,
    VarRole,
};
use crate::lang::{Command, Cond, Procedure, Program};
use crate::types::{CanonicalType, Flags, TypeContext, TypeEnv};

/// Variables of one procedure as seen by the type system.
#[derive(Clone, Debug, Default)]
pub struct Scope {
    pub shared: BTreeSet<String>,
    pub locals: BTreeSet<String>,
    pub angels: BTreeSet<String>,
}

impl Scope {
    pub fn of(prog: &Program, p: &Procedure) -> Scope {
        Scope {
            shared: prog.shared.iter().cloned().collect(),
            locals: p.locals.iter().cloned().collect(),
            angels: p.angels.iter().cloned().collect(),
        }
    }

    /// Pointer and angel variables, the domain of environments.
    pub fn vars(&self) -> impl Iterator<Item = &String> {
        self.shared.iter().chain(&self.locals).chain(&self.angels)
    }

    pub fn is_shared(&self, v: &str) -> bool {
        self.shared.contains(v)
    }

    pub fn role<'a>(&self, v: &'a str) -> VarRole<'a> {
        if self.angels.contains(v) {
            VarRole::Angel(v)
        } else {
            VarRole::Pointer(v)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error("function `{0}` is neither in the safe-call table nor in the automaton")]
    UnknownFunction(String),
    #[error("call of `{func}` with {got} pointer arguments, expected {expected}")]
    Arity {
        func: String,
        got: usize,
        expected: usize,
    },
    #[error("variable `{0}` is not a pointer or angel in scope")]
    NotInScope(String),
}

/// Why a premise of a rule does not hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub rule: &'static str,
    pub var: String,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} {}", self.rule, self.var, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpError {
    /// A rule premise failed; the post is Top.
    Premise(Diagnostic),
    /// The command cannot be typed at all against this automaton.
    Rule(RuleError),
}

impl From<RuleError> for SpError {
    fn from(e: RuleError) -> Self {
        SpError::Rule(e)
    }
}

impl From<AutomatonError> for SpError {
    fn from(e: AutomatonError) -> Self {
        SpError::Rule(RuleError::Automaton(e))
    }
}

/// Which validity masks over a function's pointer arguments are safe.
#[derive(Debug, Clone, Default)]
pub struct SafeCallTable {
    /// function -> (pointer arity, positions that must be valid)
    pub required: BTreeMap<String, (usize, Vec<usize>)>,
}

impl SafeCallTable {
    /// Declarations of the automaton; `retire` defaults to requiring every
    /// argument valid, all other functions to accepting invalid arguments.
    pub fn from_automaton(o: &SmrAutomaton) -> SafeCallTable {
        let mut required = BTreeMap::new();
        for e in o.events.iter().filter(|e| e.kind == EventKind::Enter) {
            let k = e.params.iter().filter(|s| **s == Sort::Address).count();
            let decl = o.calls.iter().find(|c| c.func == e.func);
            let req = match decl {
                Some(c) => c.positions.iter().copied().filter(|&p| p < k).collect(),
                None if e.func == "retire" => (0..k).collect(),
                None => Vec::new(),
            };
            required.insert(e.func.clone(), (k, req));
        }
        SafeCallTable { required }
    }

    /// Safety of `func` when exactly the positions in `valid_mask` hold valid pointers.
    pub fn lookup(&self, func: &str, valid_mask: u32) -> Result<bool, RuleError> {
        let (_, req) = self
            .required
            .get(func)
            .ok_or_else(|| RuleError::UnknownFunction(func.to_string()))?;
        Ok(req.iter().all(|&p| valid_mask >> p & 1 == 1))
    }

    /// All (function, mask, safe) entries.
    pub fn entries(&self) -> Vec<(String, u32, bool)> {
        let mut out = Vec::new();
        for (f, (k, _)) in &self.required {
            for mask in 0..(1u32 << k) {
                out.push((f.clone(), mask, self.lookup(f, mask).unwrap()));
            }
        }
        out
    }
}

pub fn safe_call(
    env: &TypeEnv,
    func: &str,
    ptrs: &[String],
    table: &SafeCallTable,
) -> Result<bool, RuleError> {
    let (k, _) = table
        .required
        .get(func)
        .ok_or_else(|| RuleError::UnknownFunction(func.to_string()))?;
    if *k != ptrs.len() {
        return Err(RuleError::Arity {
            func: func.into(),
            got: ptrs.len(),
            expected: *k,
        });
    }
    let mut mask = 0u32;
    for (i, p) in ptrs.iter().enumerate() {
        let t = env.get(p).ok_or_else(|| RuleError::NotInScope(p.clone()))?;
        if t.is_valid() {
            mask |= 1 << i;
        }
    }
    table.lookup(func, mask)
}

fn ty(env: &TypeEnv, v: &str) -> Result<CanonicalType, SpError> {
    env.get(v)
        .copied()
        .ok_or_else(|| SpError::Rule(RuleError::NotInScope(v.to_string())))
}

fn need_valid(env: &TypeEnv, rule: &'static str, v: &str) -> Result<(), SpError> {
    if ty(env, v)?.is_valid() {
        Ok(())
    } else {
        Err(SpError::Premise(Diagnostic {
            rule,
            var: v.to_string(),
            reason: "is not valid".into(),
        }))
    }
}

fn ptr_atoms(c: &Cond, out: &mut Vec<(String, String)>) {
    match c {
        Cond::PtrEq(p, q) | Cond::PtrNeq(p, q) => out.push((p.clone(), q.clone())),
        Cond::Not(a) => ptr_atoms(a, out),
        Cond::And(a, b) | Cond::Or(a, b) => {
            ptr_atoms(a, out);
            ptr_atoms(b, out);
        }
        Cond::True | Cond::Data(_) => {}
    }
}

/// `sp(Γ, com)`; a failed premise is reported as [`SpError::Premise`].
pub fn sp(
    ctx: &TypeContext,
    table: &SafeCallTable,
    scope: &Scope,
    env: &TypeEnv,
    com: &Command,
) -> Result<TypeEnv, SpError> {
    use Command::*;
    if env.is_top() {
        return Ok(TypeEnv::Top);
    }
    let mut out = env.clone();
    let minus_l = |t: CanonicalType| ctx.make(t.flags.minus(Flags::L), t.custom);
    match com {
        Skip | BeginAtomic | EndAtomic | AssumeNeq(..) | AssumePred(..) | Assert(_) => {}
        DataOp(..) => {}
        PtrAssign(p, q) => {
            let t = minus_l(ty(env, q)?);
            ty(env, p)?;
            out.set(p, t);
            out.set(q, t);
        }
        PtrLoad(p, q) => {
            need_valid(env, "ASSIGN2", q)?;
            ty(env, p)?;
            out.set(p, ctx.empty());
        }
        PtrStore(p, q) => {
            need_valid(env, "ASSIGN3", p)?;
            let t = minus_l(ty(env, q)?);
            out.set(q, t);
        }
        DataLoad(_, q) => need_valid(env, "ASSIGN5", q)?,
        DataStore(p, _) => need_valid(env, "ASSIGN6", p)?,
        Malloc(p) => {
            ty(env, p)?;
            if scope.is_shared(p) {
                return Err(SpError::Premise(Diagnostic {
                    rule: "MALLOC",
                    var: p.clone(),
                    reason: "is shared; allocation targets must be local".into(),
                }));
            }
            out.set(p, ctx.with_flags(Flags::L));
        }
        Havoc(p) => {
            ty(env, p)?;
            out.set(p, ctx.empty());
        }
        AssumeEq(p, q) => {
            need_valid(env, "ASSUME1", p)?;
            need_valid(env, "ASSUME1", q)?;
            let m = minus_l(ctx.meet(&ty(env, p)?, &ty(env, q)?));
            out.set(p, m);
            out.set(q, m);
        }
        AssumeCond(c) => {
            let mut atoms = Vec::new();
            ptr_atoms(c, &mut atoms);
            for (p, q) in atoms {
                need_valid(env, "ASSUME1", &p)?;
                need_valid(env, "ASSUME1", &q)?;
            }
        }
        InvEq(p, q) => {
            let m = ctx.meet(&ty(env, p)?, &ty(env, q)?);
            out.set(p, m);
            out.set(q, m);
        }
        InvActivePtr(x) | InvActiveAngel(x) => {
            let m = ctx.meet(&ty(env, x)?, &ctx.with_flags(Flags::A));
            out.set(x, m);
        }
        InvAngel(r) => {
            ty(env, r)?;
            if !scope.angels.contains(r) {
                return Err(SpError::Premise(Diagnostic {
                    rule: "ANGEL",
                    var: r.clone(),
                    reason: "is not a local angel".into(),
                }));
            }
            out.set(r, ctx.empty());
        }
        InvMember(p, r) => {
            let m = ctx.meet(&ty(env, p)?, &ty(env, r)?);
            out.set(p, m);
        }
        Enter(f, ps, _) => {
            if !safe_call(env, f, ps, table)? {
                let bad = ps
                    .iter()
                    .find(|p| !env.get(p).map(|t| t.is_valid()).unwrap_or(false))
                    .cloned()
                    .unwrap_or_default();
                return Err(SpError::Premise(Diagnostic {
                    rule: "ENTER",
                    var: bad,
                    reason: format!("is not valid; unsafe call of `{f}`"),
                }));
            }
            if f == "retire" {
                for p in ps {
                    if !ty(env, p)?.flags.has(Flags::A) {
                        return Err(SpError::Premise(Diagnostic {
                            rule: "ENTER",
                            var: p.clone(),
                            reason: "is not active; retire requires A".into(),
                        }));
                    }
                }
            }
            transform_all(ctx, scope, env, &mut out, com)?;
        }
        Exit(_) => transform_all(ctx, scope, env, &mut out, com)?,
    }
    Ok(out)
}

fn transform_all(
    ctx: &TypeContext,
    scope: &Scope,
    env: &TypeEnv,
    out: &mut TypeEnv,
    com: &Command,
) -> Result<(), SpError> {
    for v in scope.vars() {
        let t = ty(env, v)?;
        let t2 = ctx.transformer(&t, scope.role(v), com)?;
        out.set(v, t2);
    }
    Ok(())
}

/// Audit outcome for one safe-call table entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum AuditVerdict {
    Verified,
    Refuted { location: String },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub func: String,
    /// Bit i set: pointer argument i is valid.
    pub mask: u32,
    #[serde(flatten)]
    pub verdict: AuditVerdict,
}

/// Check every safe entry of `table`: replacing invalid arguments that do
/// not hold the tracked address by arbitrary values must not enable frees
/// of the tracked address that the original call forbids.
pub fn verify_safe_call_table(o: &SmrAutomaton, table: &SafeCallTable) -> Vec<AuditEntry> {
    let tracked = (1u32 << o.zt) | (1u32 << o.za);
    let extra_vars = o.vars.len() > 2;
    let nfa = abstract_to_nfa(o, tracked);
    let free = o.free_event();
    let frees = nfa.restrict(|s| Some(s.event) == free && s.values == vec![1u32 << o.za]);
    let mut out = Vec::new();
    for (func, mask, safe) in table.entries() {
        if !safe {
            continue;
        }
        let Some(e) = o.event_index(EventKind::Enter, &func) else {
            continue;
        };
        let sig = &o.events[e];
        // pointer-argument index -> parameter index
        let addr: Vec<usize> = (0..sig.params.len()).filter(|&i| sig.params[i] == Sort::Address).collect();
        let invalid: Vec<usize> = (0..addr.len()).filter(|i| mask >> i & 1 == 0).map(|i| addr[i]).collect();
        if invalid.is_empty() {
            out.push(AuditEntry {
                func,
                mask,
                verdict: AuditVerdict::Verified,
            });
            continue;
        }
        if extra_vars {
            out.push(AuditEntry {
                func,
                mask,
                verdict: AuditVerdict::Inconclusive {
                    reason: "automaton has variables beyond the tracked thread and address".into(),
                },
            });
            continue;
        }
        let syms: Vec<usize> = (0..nfa.symbols.len()).filter(|&s| nfa.symbols[s].event == e).collect();
        let mut verdict = AuditVerdict::Verified;
        'outer: for l in 0..o.n_locations() {
            for &sa in &syms {
                let a = &nfa.symbols[sa].values;
                // actual arguments at invalid positions do not hold the tracked address
                if invalid.iter().any(|&i| a[i] != 0) {
                    continue;
                }
                for &sb in &syms {
                    let b = &nfa.symbols[sb].values;
                    let same_elsewhere = (0..a.len()).all(|i| invalid.contains(&i) || a[i] == b[i]);
                    if !same_elsewhere {
                        continue;
                    }
                    let post_a = nfa.delta[l][sa];
                    let post_b = nfa.delta[l][sb];
                    let ok = nfa_language_inclusion(&frees.with_initial(post_a), &frees.with_initial(post_b))
                        .expect("same alphabet");
                    if !ok {
                        verdict = AuditVerdict::Refuted {
                            location: o.locations[l].name.clone(),
                        };
                        break 'outer;
                    }
                }
            }
        }
        out.push(AuditEntry { func, mask, verdict });
    }
    out
}

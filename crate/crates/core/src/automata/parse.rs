use std::collections::HashMap;

use super::*;
use crate::lang::{lex, Cursor, LangError, Tok};

fn syntax(e: LangError) -> AutomatonError {
    match e {
        LangError::Syntax { line, col, msg } => AutomatonError::Syntax { line, col, msg },
        other => AutomatonError::Syntax {
            line: 0,
            col: 0,
            msg: other.to_string(),
        },
    }
}

struct RawTransition {
    src: usize,
    dst: usize,
    event: usize,
    guard: Guard,
}

/// Parse the automaton DSL.
///
/// ```text
/// automaton Base {
///   vars zt: thread, za: address;
///   events enter retire(t, a), free(a);
///   locations I init active, R, F accepting;
///   I -> R on enter retire(t, a) when a == za;
///   R -> I on free(a) when a == za;
///   I -> F on free(a) when a == za;
///   call retire requires valid(0);
/// }
/// ```
///
/// Every (location, event) pair gets self-loops for the complement of its
/// explicit guards. `exit f` is implied by `enter f` and vice versa; `free`
/// joins the alphabet when declared or used by a transition.
pub fn parse_automaton(text: &str) -> Result<SmrAutomaton, AutomatonError> {
    let toks = lex(text).map_err(syntax)?;
    let mut c = Cursor::new(toks);
    AutParser { c: &mut c }.automaton()
}

struct AutParser<'a> {
    c: &'a mut Cursor,
}

impl AutParser<'_> {
    fn s<T>(&self, r: Result<T, LangError>) -> Result<T, AutomatonError> {
        r.map_err(syntax)
    }

    fn automaton(&mut self) -> Result<SmrAutomaton, AutomatonError> {
        let r = self.c.expect_kw("automaton");
        self.s(r)?;
        let r = self.c.ident();
        let name = self.s(r)?;
        let r = self.c.expect_sym("{");
        self.s(r)?;
        let mut elision = false;
        let mut vars: Vec<AutVar> = Vec::new();
        let mut events: Vec<EventSig> = vec![EventSig {
            kind: EventKind::Free,
            func: "free".into(),
            params: vec![Sort::Address],
        }];
        let mut locations: Vec<Location> = Vec::new();
        let mut initial = None;
        let mut raw: Vec<RawTransition> = Vec::new();
        let mut calls = Vec::new();
        let mut free_declared = false;
        loop {
            if self.c.eat_sym("}") {
                break;
            }
            if self.c.eat_kw("assume") {
                let r = self.c.expect_kw("elision");
                self.s(r)?;
                elision = true;
            } else if self.c.eat_kw("vars") {
                loop {
                    let r = self.c.ident();
                    let v = self.s(r)?;
                    let r = self.c.expect_sym(":");
                    self.s(r)?;
                    let sort = self.sort()?;
                    if vars.iter().any(|x| x.name == v) {
                        return self.err(format!("variable `{v}` declared twice"));
                    }
                    vars.push(AutVar { name: v, sort });
                    if !self.c.eat_sym(",") {
                        break;
                    }
                }
            } else if self.c.eat_kw("events") {
                loop {
                    let sig = self.event_decl()?;
                    free_declared |= sig.kind == EventKind::Free;
                    add_event(&mut events, sig).map_err(|m| self.at(m))?;
                    if !self.c.eat_sym(",") {
                        break;
                    }
                }
            } else if self.c.eat_kw("locations") {
                loop {
                    let r = self.c.ident();
                    let n = self.s(r)?;
                    if locations.iter().any(|l| l.name == n) {
                        return self.err(format!("location `{n}` declared twice"));
                    }
                    let mut loc = Location {
                        name: n,
                        accepting: false,
                        active: false,
                    };
                    loop {
                        if self.c.eat_kw("init") {
                            if initial.is_some() {
                                return self.err("more than one initial location");
                            }
                            initial = Some(locations.len());
                        } else if self.c.eat_kw("accepting") {
                            loc.accepting = true;
                        } else if self.c.eat_kw("active") {
                            loc.active = true;
                        } else {
                            break;
                        }
                    }
                    locations.push(loc);
                    if !self.c.eat_sym(",") {
                        break;
                    }
                }
            } else if self.c.eat_kw("call") {
                let r = self.c.ident();
                let f = self.s(r)?;
                let r = self.c.expect_kw("requires");
                self.s(r)?;
                let r = self.c.expect_kw("valid");
                self.s(r)?;
                let r = self.c.expect_sym("(");
                self.s(r)?;
                let mut positions = Vec::new();
                if !self.c.is_sym(")") {
                    loop {
                        let r = self.c.ident();
                        let n = self.s(r)?;
                        let p: usize = n
                            .parse()
                            .map_err(|_| self.at(format!("expected position, found `{n}`")))?;
                        positions.push(p);
                        if !self.c.eat_sym(",") {
                            break;
                        }
                    }
                }
                let r = self.c.expect_sym(")");
                self.s(r)?;
                calls.push(CallRequirement { func: f, positions });
            } else {
                let t = self.transition(&vars, &events, &locations)?;
                raw.push(t);
            }
            let r = self.c.expect_sym(";");
            self.s(r)?;
        }
        if !matches!(self.c.peek(), Tok::Eof) {
            return self.err("trailing input after automaton");
        }
        let zt = vars
            .iter()
            .position(|v| v.sort == Sort::Thread)
            .ok_or_else(|| self.at("automaton needs a thread-sorted variable".into()))?;
        let za = vars
            .iter()
            .position(|v| v.sort == Sort::Address)
            .ok_or_else(|| self.at("automaton needs an address-sorted variable".into()))?;
        if locations.is_empty() {
            return self.err("no locations declared");
        }
        if locations.len() > MAX_LOCATIONS {
            return Err(AutomatonError::TooLarge);
        }
        for c in &calls {
            if !events.iter().any(|e| e.kind == EventKind::Enter && e.func == c.func) {
                return Err(AutomatonError::UnknownEvent(c.func.clone()));
            }
        }
        // free joins the alphabet only when declared or used
        if !free_declared && raw.iter().all(|t| t.event != 0) {
            events.remove(0);
            for t in &mut raw {
                t.event -= 1;
            }
        }
        check_acceptance(&locations, &events, &raw)?;
        let transitions = complete(&vars, &events, locations.len(), raw);
        Ok(SmrAutomaton {
            name,
            elision,
            vars,
            zt,
            za,
            events,
            locations,
            initial: initial.unwrap_or(0),
            transitions,
            calls,
            has_active_marker: false,
            out: Vec::new(),
            interference: Vec::new(),
        }
        .finish())
    }

    fn at(&self, msg: String) -> AutomatonError {
        let (line, col) = self.c.here();
        AutomatonError::Syntax { line, col, msg }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, AutomatonError> {
        Err(self.at(msg.into()))
    }

    fn sort(&mut self) -> Result<Sort, AutomatonError> {
        let r = self.c.ident();
        match self.s(r)?.as_str() {
            "thread" => Ok(Sort::Thread),
            "address" => Ok(Sort::Address),
            "data" => Ok(Sort::Data),
            other => self.err(format!("unknown sort `{other}`")),
        }
    }

    /// `enter f(t, a, v: data)`, `exit f(t)` or `free(a)`; returns formal names too.
    fn event_head(&mut self) -> Result<(EventKind, String, Vec<(String, Option<Sort>)>), AutomatonError> {
        let (kind, func) = if self.c.eat_kw("enter") {
            let r = self.c.ident();
            (EventKind::Enter, self.s(r)?)
        } else if self.c.eat_kw("exit") {
            let r = self.c.ident();
            (EventKind::Exit, self.s(r)?)
        } else if self.c.eat_kw("free") {
            (EventKind::Free, "free".to_string())
        } else {
            return self.err(format!(
                "expected `enter`, `exit` or `free`, found {}",
                crate::lang::describe(self.c.peek())
            ));
        };
        let mut formals = Vec::new();
        if self.c.eat_sym("(") {
            if !self.c.is_sym(")") {
                loop {
                    let r = self.c.ident();
                    let n = self.s(r)?;
                    let sort = if self.c.eat_sym(":") {
                        Some(self.sort()?)
                    } else {
                        None
                    };
                    formals.push((n, sort));
                    if !self.c.eat_sym(",") {
                        break;
                    }
                }
            }
            let r = self.c.expect_sym(")");
            self.s(r)?;
        }
        Ok((kind, func, formals))
    }

    fn event_decl(&mut self) -> Result<EventSig, AutomatonError> {
        let (kind, func, formals) = self.event_head()?;
        let params: Vec<Sort> = match kind {
            EventKind::Free => {
                if formals.len() != 1 {
                    return self.err("`free` takes exactly one address parameter");
                }
                vec![Sort::Address]
            }
            EventKind::Exit => {
                if formals.len() > 1 {
                    return self.err(format!("`exit {func}` takes only the thread parameter"));
                }
                vec![Sort::Thread]
            }
            EventKind::Enter => {
                if formals.is_empty() {
                    return self.err(format!("`enter {func}` needs a thread parameter"));
                }
                let mut ps = vec![Sort::Thread];
                for (_, s) in &formals[1..] {
                    match s {
                        None | Some(Sort::Address) => ps.push(Sort::Address),
                        Some(Sort::Data) => ps.push(Sort::Data),
                        Some(Sort::Thread) => {
                            return self.err("only the first parameter may be a thread")
                        }
                    }
                }
                ps
            }
        };
        Ok(EventSig { kind, func, params })
    }

    fn transition(
        &mut self,
        vars: &[AutVar],
        events: &[EventSig],
        locations: &[Location],
    ) -> Result<RawTransition, AutomatonError> {
        let loc = |p: &Self, n: &str| {
            locations
                .iter()
                .position(|l| l.name == n)
                .ok_or_else(|| p.at(format!("unknown location `{n}`")))
        };
        let r = self.c.ident();
        let src = self.s(r)?;
        let src = loc(self, &src)?;
        let r = self.c.expect_sym("->");
        self.s(r)?;
        let r = self.c.ident();
        let dst = self.s(r)?;
        let dst = loc(self, &dst)?;
        let r = self.c.expect_kw("on");
        self.s(r)?;
        let (kind, func, formals) = self.event_head()?;
        let e = events
            .iter()
            .position(|e| e.kind == kind && e.func == func)
            .ok_or_else(|| self.at(format!("event `{func}` is not declared")))?;
        let sig = &events[e];
        if !formals.is_empty() && formals.len() != sig.params.len() {
            return self.err(format!(
                "event `{}` has {} parameters, transition names {}",
                sig.label(),
                sig.params.len(),
                formals.len()
            ));
        }
        let names: Vec<String> = if formals.is_empty() {
            (0..sig.params.len()).map(|i| format!("x{i}")).collect()
        } else {
            formals.into_iter().map(|(n, _)| n).collect()
        };
        let mut guard = Vec::new();
        if self.c.eat_kw("when") {
            if !self.c.eat_kw("true") {
                loop {
                    guard.push(self.atom(&names, vars)?);
                    if !self.c.eat_sym("&&") {
                        break;
                    }
                }
            }
        }
        Ok(RawTransition {
            src,
            dst,
            event: e,
            guard: Guard(guard),
        })
    }

    fn atom(&mut self, params: &[String], vars: &[AutVar]) -> Result<Atom, AutomatonError> {
        let (line, col) = self.c.here();
        let r = self.c.ident();
        let lhs = self.s(r)?;
        let eq = if self.c.eat_sym("==") {
            true
        } else if self.c.eat_sym("!=") {
            false
        } else {
            return self.err("expected `==` or `!=`");
        };
        let r = self.c.ident();
        let rhs = self.s(r)?;
        let p = |n: &str| params.iter().position(|x| x == n);
        let v = |n: &str| vars.iter().position(|x| x.name == n);
        let guard_err = |msg: String| AutomatonError::Guard { line, col, msg };
        match (p(&lhs), v(&lhs), p(&rhs), v(&rhs)) {
            (Some(i), _, _, Some(j)) | (_, Some(j), Some(i), _) => Ok(Atom {
                param: i,
                var: j,
                eq,
            }),
            (Some(_), _, Some(_), _) => Err(guard_err(format!("`{lhs}` and `{rhs}` are both parameters"))),
            (_, Some(_), _, Some(_)) => Err(guard_err(format!("`{lhs}` and `{rhs}` are both variables"))),
            _ => Err(guard_err(format!("unknown name in `{lhs}` / `{rhs}`"))),
        }
    }
}

fn add_event(events: &mut Vec<EventSig>, sig: EventSig) -> Result<(), String> {
    if let Some(old) = events.iter().find(|e| e.kind == sig.kind && e.func == sig.func) {
        if old.params != sig.params {
            return Err(format!("event `{}` declared with two arities", sig.label()));
        }
        return Ok(());
    }
    let counterpart = match sig.kind {
        EventKind::Enter => Some(EventSig {
            kind: EventKind::Exit,
            func: sig.func.clone(),
            params: vec![Sort::Thread],
        }),
        EventKind::Exit => None,
        EventKind::Free => None,
    };
    let is_exit = sig.kind == EventKind::Exit;
    let func = sig.func.clone();
    events.push(sig);
    if let Some(c) = counterpart {
        if !events.iter().any(|e| e.kind == c.kind && e.func == c.func) {
            events.push(c);
        }
    }
    if is_exit && !events.iter().any(|e| e.kind == EventKind::Enter && e.func == func) {
        events.push(EventSig {
            kind: EventKind::Enter,
            func,
            params: vec![Sort::Thread],
        });
    }
    Ok(())
}

fn check_acceptance(
    locations: &[Location],
    events: &[EventSig],
    raw: &[RawTransition],
) -> Result<(), AutomatonError> {
    for t in raw {
        let (s, d) = (&locations[t.src], &locations[t.dst]);
        if d.accepting && !s.accepting && events[t.event].kind != EventKind::Free {
            return Err(AutomatonError::Acceptance(format!(
                "`{}` reaches accepting `{}` on {}",
                s.name,
                d.name,
                events[t.event].label()
            )));
        }
        if s.accepting && !d.accepting {
            return Err(AutomatonError::Acceptance(format!(
                "accepting `{}` has a transition to non-accepting `{}`",
                s.name, d.name
            )));
        }
    }
    Ok(())
}

/// Explicit transitions plus self-loops covering the complement of their guards.
fn complete(
    vars: &[AutVar],
    events: &[EventSig],
    n_locs: usize,
    raw: Vec<RawTransition>,
) -> Vec<Transition> {
    let mut by: HashMap<(usize, usize), Vec<Guard>> = HashMap::new();
    let mut out = Vec::new();
    for t in raw {
        by.entry((t.src, t.event)).or_default().push(t.guard.clone());
        out.push(Transition {
            src: t.src,
            event: t.event,
            guard: t.guard,
            dst: t.dst,
            implicit: false,
        });
    }
    for l in 0..n_locs {
        for (e, sig) in events.iter().enumerate() {
            let guards = by.get(&(l, e)).cloned().unwrap_or_default();
            for g in complement(&guards, &sig.params, vars) {
                out.push(Transition {
                    src: l,
                    event: e,
                    guard: g,
                    dst: l,
                    implicit: true,
                });
            }
        }
    }
    out
}

/// DNF of the negated disjunction of `guards`, with unsatisfiable and
/// duplicate conjunctions dropped.
fn complement(guards: &[Guard], params: &[Sort], vars: &[AutVar]) -> Vec<Guard> {
    let mut dnf: Vec<Vec<Atom>> = vec![Vec::new()];
    for g in guards {
        if g.0.is_empty() {
            return Vec::new();
        }
        let mut next = Vec::new();
        for conj in &dnf {
            for a in &g.0 {
                let mut c = conj.clone();
                let n = a.negate();
                if !c.contains(&n) {
                    c.push(n);
                }
                c.sort();
                let lits: Vec<Lit> = c.iter().map(Lit::atom).collect();
                if satisfiable(&lits, params, vars) && !next.contains(&c) {
                    next.push(c);
                }
            }
        }
        dnf = next;
    }
    dnf.into_iter().map(Guard).collect()
}

//! SMR automata: guarded observers over enter/exit/free events.

mod locset;
mod nfa;
mod parse;
mod product;

pub use locset::{LocSet, MAX_LOCATIONS};
pub use nfa::{abstract_to_nfa, nfa_language_inclusion, AbsSymbol, AbstractNfa};
pub use parse::parse_automaton;
pub use product::{product, SINK};

use serde::Serialize;
use thiserror::Error;

use crate::lang::Command;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutomatonError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: guard atom must relate a parameter to an automaton variable: {msg}")]
    Guard { line: usize, col: usize, msg: String },
    #[error("accepting locations: {0}")]
    Acceptance(String),
    #[error("event `{0}` is not in the automaton's alphabet")]
    UnknownEvent(String),
    #[error("event `{func}`: {msg}")]
    Arity { func: String, msg: String },
    #[error("automaton has more than {MAX_LOCATIONS} locations")]
    TooLarge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sort {
    Thread,
    Address,
    Data,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutVar {
    pub name: String,
    pub sort: Sort,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Enter,
    Exit,
    Free,
}

/// An alphabet entry. Enter events carry `(thread, addresses/data...)`,
/// exit events `(thread)`, free events `(address)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventSig {
    pub kind: EventKind,
    pub func: String,
    pub params: Vec<Sort>,
}

impl EventSig {
    pub fn has_thread(&self) -> bool {
        self.params.first() == Some(&Sort::Thread)
    }

    pub fn label(&self) -> String {
        match self.kind {
            EventKind::Enter => format!("enter {}", self.func),
            EventKind::Exit => format!("exit {}", self.func),
            EventKind::Free => "free".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    pub name: String,
    pub accepting: bool,
    /// Tracked address is neither retired nor freed here (base component at init).
    pub active: bool,
}

/// `param == var` (or `!=`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub param: usize,
    pub var: usize,
    pub eq: bool,
}

impl Atom {
    pub fn negate(self) -> Atom {
        Atom { eq: !self.eq, ..self }
    }
}

/// Conjunction of atoms; empty means `true`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Guard(pub Vec<Atom>);

impl Guard {
    pub fn eval(&self, params: &[u32], phi: &[u32]) -> bool {
        self.0
            .iter()
            .all(|a| (params[a.param] == phi[a.var]) == a.eq)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub src: usize,
    pub event: usize,
    pub guard: Guard,
    pub dst: usize,
    /// Added when completing the automaton with self-loops.
    pub implicit: bool,
}

/// `call f requires valid(i, ...)` declarations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallRequirement {
    pub func: String,
    pub positions: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SmrAutomaton {
    pub name: String,
    pub elision: bool,
    pub vars: Vec<AutVar>,
    pub zt: usize,
    pub za: usize,
    pub events: Vec<EventSig>,
    pub locations: Vec<Location>,
    pub initial: usize,
    pub transitions: Vec<Transition>,
    pub calls: Vec<CallRequirement>,
    /// Whether some location carries the `active` marker.
    pub has_active_marker: bool,
    out: Vec<Vec<Vec<usize>>>,
    interference: Vec<LocSet>,
}

/// Term of the guard constraint language.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Param(usize),
    Var(usize),
}

/// (In)equality between two terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lit {
    pub a: Term,
    pub b: Term,
    pub eq: bool,
}

impl Lit {
    pub fn atom(a: &Atom) -> Lit {
        Lit {
            a: Term::Param(a.param),
            b: Term::Var(a.var),
            eq: a.eq,
        }
    }

    pub fn pv(param: usize, var: usize, eq: bool) -> Lit {
        Lit {
            a: Term::Param(param),
            b: Term::Var(var),
            eq,
        }
    }
}

/// Satisfiability of a conjunction of (dis)equalities over an unbounded domain
/// per sort. Terms of different sorts never coincide.
pub fn satisfiable(lits: &[Lit], params: &[Sort], vars: &[AutVar]) -> bool {
    let np = params.len();
    let idx = |t: Term| match t {
        Term::Param(i) => i,
        Term::Var(j) => np + j,
    };
    let sort = |t: Term| match t {
        Term::Param(i) => params[i],
        Term::Var(j) => vars[j].sort,
    };
    let mut parent: Vec<usize> = (0..np + vars.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let n = p[y];
            p[y] = r;
            y = n;
        }
        r
    }
    for l in lits.iter().filter(|l| l.eq) {
        if sort(l.a) != sort(l.b) {
            return false;
        }
        let (x, y) = (find(&mut parent, idx(l.a)), find(&mut parent, idx(l.b)));
        parent[x] = y;
    }
    for l in lits.iter().filter(|l| !l.eq) {
        if sort(l.a) != sort(l.b) {
            continue;
        }
        if find(&mut parent, idx(l.a)) == find(&mut parent, idx(l.b)) {
            return false;
        }
    }
    true
}

/// A concrete history event.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub kind: EventKind,
    pub func: String,
    pub thread: Option<u32>,
    /// Non-thread parameter values in declaration order.
    pub values: Vec<u32>,
}

impl Event {
    pub fn enter(func: &str, t: u32, values: Vec<u32>) -> Event {
        Event {
            kind: EventKind::Enter,
            func: func.to_string(),
            thread: Some(t),
            values,
        }
    }

    pub fn exit(func: &str, t: u32) -> Event {
        Event {
            kind: EventKind::Exit,
            func: func.to_string(),
            thread: Some(t),
            values: vec![],
        }
    }

    pub fn free(a: u32) -> Event {
        Event {
            kind: EventKind::Free,
            func: "free".into(),
            thread: None,
            values: vec![a],
        }
    }

    pub fn params(&self) -> Vec<u32> {
        self.thread.iter().copied().chain(self.values.iter().copied()).collect()
    }
}

/// Role of a variable whose type is being transformed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarRole<'a> {
    Pointer(&'a str),
    Angel(&'a str),
}

impl SmrAutomaton {
    /// Build indices; call after constructing or changing transitions.
    pub(crate) fn finish(mut self) -> Self {
        let (n, ne) = (self.locations.len(), self.events.len());
        let mut out = vec![vec![Vec::new(); ne]; n];
        for (i, t) in self.transitions.iter().enumerate() {
            out[t.src][t.event].push(i);
        }
        self.out = out;
        self.has_active_marker = self.locations.iter().any(|l| l.active);
        let mut intf = vec![LocSet::EMPTY; n];
        for t in &self.transitions {
            let ev = &self.events[t.event];
            if !ev.has_thread() {
                continue;
            }
            let mut lits: Vec<Lit> = t.guard.0.iter().map(Lit::atom).collect();
            lits.push(Lit::pv(0, self.zt, false));
            if satisfiable(&lits, &ev.params, &self.vars) {
                intf[t.src].insert(t.dst);
            }
        }
        self.interference = intf;
        self
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn all_locations(&self) -> LocSet {
        LocSet::full(self.locations.len())
    }

    pub fn accepting(&self) -> LocSet {
        LocSet::from_iter((0..self.locations.len()).filter(|&l| self.locations[l].accepting))
    }

    /// Locations where the tracked address is active; all locations when
    /// the automaton has no `active` markers.
    pub fn active_locations(&self) -> LocSet {
        if !self.has_active_marker {
            return self.all_locations();
        }
        LocSet::from_iter((0..self.locations.len()).filter(|&l| self.locations[l].active))
    }

    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.name == name)
    }

    pub fn locset_names(&self, s: LocSet) -> Vec<String> {
        s.iter().map(|l| self.locations[l].name.clone()).collect()
    }

    pub fn locset_of(&self, names: &[&str]) -> Option<LocSet> {
        let mut s = LocSet::EMPTY;
        for n in names {
            s.insert(self.location_index(n)?);
        }
        Some(s)
    }

    pub fn event_index(&self, kind: EventKind, func: &str) -> Option<usize> {
        self.events
            .iter()
            .position(|e| e.kind == kind && (kind == EventKind::Free || e.func == func))
    }

    pub fn free_event(&self) -> Option<usize> {
        self.event_index(EventKind::Free, "free")
    }

    pub fn transitions_from(&self, l: usize, e: usize) -> impl Iterator<Item = &Transition> {
        self.out[l][e].iter().map(move |&i| &self.transitions[i])
    }

    /// Successors of `l` under another thread's events.
    pub fn interference_successors(&self, l: usize) -> LocSet {
        self.interference[l]
    }

    /// Locations reachable from `(initial, phi)` under history `h`. Events
    /// outside the alphabet leave the state unchanged.
    pub fn run_history(&self, phi: &[u32], h: &[Event]) -> LocSet {
        let mut cur = LocSet::single(self.initial);
        for ev in h {
            cur = self.step_concrete(cur, phi, ev);
        }
        cur
    }

    pub fn step_concrete(&self, cur: LocSet, phi: &[u32], ev: &Event) -> LocSet {
        let Some(e) = self.event_index(ev.kind, &ev.func) else {
            return cur;
        };
        let params = ev.params();
        if params.len() != self.events[e].params.len() {
            return cur;
        }
        self.step_event(cur, phi, e, &params)
    }

    /// One step on event index `e` with full parameter vector `params`.
    pub fn step_event(&self, cur: LocSet, phi: &[u32], e: usize, params: &[u32]) -> LocSet {
        let mut next = LocSet::EMPTY;
        for l in cur.iter() {
            for t in self.transitions_from(l, e) {
                if t.guard.eval(params, phi) {
                    next.insert(t.dst);
                }
            }
        }
        next
    }

    /// Whether history `h` is allowed for valuation `phi`.
    pub fn allows(&self, phi: &[u32], h: &[Event]) -> bool {
        self.run_history(phi, h).inter(self.accepting()).is_empty()
    }

    /// Symbolic post of `l_set` under event `e` by the observed thread, with
    /// the listed parameter positions bound to the tracked address.
    pub fn post_event(&self, e: usize, za_params: &[usize], l_set: LocSet) -> LocSet {
        let ev = &self.events[e];
        let mut base: Vec<Lit> = Vec::new();
        if ev.has_thread() {
            base.push(Lit::pv(0, self.zt, true));
        }
        for &i in za_params {
            base.push(Lit::pv(i, self.za, true));
        }
        let mut out = LocSet::EMPTY;
        for l in l_set.iter() {
            for t in self.transitions_from(l, e) {
                if out.contains(t.dst) {
                    continue;
                }
                let mut lits = base.clone();
                lits.extend(t.guard.0.iter().map(Lit::atom));
                if satisfiable(&lits, &ev.params, &self.vars) {
                    out.insert(t.dst);
                }
            }
        }
        out
    }

    /// Event index and tracked-address parameter positions for an SMR
    /// command; `None` for commands that emit no event.
    pub fn command_event(
        &self,
        role: VarRole<'_>,
        com: &Command,
    ) -> Result<Option<(usize, Vec<usize>)>, AutomatonError> {
        let (e, bound) = match com {
            Command::Enter(f, ps, us) => {
                let e = self
                    .event_index(EventKind::Enter, f)
                    .ok_or_else(|| AutomatonError::UnknownEvent(f.clone()))?;
                let sig = &self.events[e];
                let np = sig.params.iter().filter(|s| **s == Sort::Address).count();
                let nd = sig.params.iter().filter(|s| **s == Sort::Data).count();
                if np != ps.len() || nd != us.len() || !sig.has_thread() {
                    return Err(AutomatonError::Arity {
                        func: f.clone(),
                        msg: format!(
                            "declared with {np} pointer and {nd} data parameters, called with {} and {}",
                            ps.len(),
                            us.len()
                        ),
                    });
                }
                let mut bound = Vec::new();
                if let VarRole::Pointer(x) = role {
                    let mut k = 0;
                    for (i, s) in sig.params.iter().enumerate() {
                        if *s == Sort::Address {
                            if ps[k] == x {
                                bound.push(i);
                            }
                            k += 1;
                        }
                    }
                }
                (e, bound)
            }
            Command::Exit(f) => {
                let e = self
                    .event_index(EventKind::Exit, f)
                    .ok_or_else(|| AutomatonError::UnknownEvent(f.clone()))?;
                (e, vec![])
            }
            _ => return Ok(None),
        };
        Ok(Some((e, bound)))
    }

    /// Locations reached from `l_set` when the observed thread executes `com`,
    /// seen from variable `role`. Non-SMR commands leave the set unchanged.
    pub fn post_image(
        &self,
        role: VarRole<'_>,
        com: &Command,
        l_set: LocSet,
    ) -> Result<LocSet, AutomatonError> {
        Ok(match self.command_event(role, com)? {
            None => l_set,
            Some((e, bound)) => self.post_event(e, &bound, l_set),
        })
    }

    /// Smallest superset of `l_set` closed under other threads' events.
    pub fn interference_closure(&self, l_set: LocSet) -> LocSet {
        let mut cur = l_set;
        let mut todo: Vec<usize> = l_set.iter().collect();
        while let Some(l) = todo.pop() {
            for m in self.interference[l].minus(cur).iter() {
                cur.insert(m);
                todo.push(m);
            }
        }
        cur
    }

    pub fn is_closed(&self, l_set: LocSet) -> bool {
        l_set.iter().all(|l| self.interference[l].is_subset(l_set))
    }

    /// Largest subset of `l_set` closed under interference.
    pub fn largest_closed_subset(&self, l_set: LocSet) -> LocSet {
        let mut cur = l_set;
        loop {
            let bad = cur
                .iter()
                .find(|&l| !self.interference[l].is_subset(cur));
            match bad {
                Some(l) => cur.remove(l),
                None => return cur,
            }
        }
    }

    /// Locations where the tracked address cannot be freed without reaching
    /// an accepting location, restricted to the largest closed subset.
    pub fn safe_locations(&self) -> LocSet {
        let mut cand = self.all_locations();
        if let Some(fe) = self.free_event() {
            let sig = &self.events[fe];
            for t in self.transitions.iter().filter(|t| t.event == fe) {
                if self.locations[t.dst].accepting {
                    continue;
                }
                let mut lits: Vec<Lit> = t.guard.0.iter().map(Lit::atom).collect();
                lits.push(Lit::pv(0, self.za, true));
                if satisfiable(&lits, &sig.params, &self.vars) {
                    cand.remove(t.src);
                }
            }
        }
        self.largest_closed_subset(cand)
    }

    /// Textual rendering in the automaton DSL (explicit transitions only).
    pub fn to_dsl(&self) -> String {
        let mut s = format!("automaton {} {{\n", self.name);
        if self.elision {
            s.push_str("  assume elision;\n");
        }
        let vars: Vec<String> = self
            .vars
            .iter()
            .map(|v| format!("{}: {}", v.name, sort_name(v.sort)))
            .collect();
        s.push_str(&format!("  vars {};\n", vars.join(", ")));
        let evs: Vec<String> = self
            .events
            .iter()
            .map(|e| {
                let ps: Vec<String> = e
                    .params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| match p {
                        Sort::Data => format!("x{i}: data"),
                        _ => format!("x{i}"),
                    })
                    .collect();
                match e.kind {
                    EventKind::Free => format!("free({})", ps.join(", ")),
                    _ => format!("{}({})", e.label(), ps.join(", ")),
                }
            })
            .collect();
        s.push_str(&format!("  events {};\n", evs.join(", ")));
        let locs: Vec<String> = self
            .locations
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut t = quote(&l.name);
                if i == self.initial {
                    t.push_str(" init");
                }
                if l.active {
                    t.push_str(" active");
                }
                if l.accepting {
                    t.push_str(" accepting");
                }
                t
            })
            .collect();
        s.push_str(&format!("  locations {};\n", locs.join(", ")));
        for t in self.transitions.iter().filter(|t| !t.implicit) {
            let e = &self.events[t.event];
            let ps: Vec<String> = (0..e.params.len()).map(|i| format!("x{i}")).collect();
            let ev = match e.kind {
                EventKind::Free => format!("free({})", ps.join(", ")),
                _ => format!("{}({})", e.label(), ps.join(", ")),
            };
            let g: Vec<String> = t
                .guard
                .0
                .iter()
                .map(|a| {
                    format!(
                        "x{} {} {}",
                        a.param,
                        if a.eq { "==" } else { "!=" },
                        self.vars[a.var].name
                    )
                })
                .collect();
            let when = if g.is_empty() {
                String::new()
            } else {
                format!(" when {}", g.join(" && "))
            };
            s.push_str(&format!(
                "  {} -> {} on {ev}{when};\n",
                quote(&self.locations[t.src].name),
                quote(&self.locations[t.dst].name)
            ));
        }
        for c in &self.calls {
            let ps: Vec<String> = c.positions.iter().map(|p| p.to_string()).collect();
            s.push_str(&format!("  call {} requires valid({});\n", c.func, ps.join(", ")));
        }
        s.push_str("}\n");
        s
    }
}

pub const BASE_SMR: &str = include_str!("../../automata/base.smr");
pub const EBR_SMR: &str = include_str!("../../automata/ebr.smr");
pub const HP2_SMR: &str = include_str!("../../automata/hp2.smr");

/// Source text of a built-in automaton.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "base" => Some(BASE_SMR),
        "ebr" => Some(EBR_SMR),
        "hp2" | "hp" => Some(HP2_SMR),
        _ => None,
    }
}

/// Built-in automaton by name, multiplied with `base` when `with_base`.
pub fn load_builtin(name: &str, with_base: bool) -> Option<SmrAutomaton> {
    let o = parse_automaton(builtin_source(name)?).expect("built-in automaton parses");
    if !with_base || name == "base" {
        return Some(o);
    }
    let base = parse_automaton(BASE_SMR).expect("built-in automaton parses");
    Some(product(&base, &o).expect("built-in automata are compatible"))
}

/// Multiply with `base` unless `o` already is the base automaton.
pub fn with_base(o: &SmrAutomaton) -> Result<SmrAutomaton, AutomatonError> {
    if o.name == "base" {
        return Ok(o.clone());
    }
    let base = parse_automaton(BASE_SMR).expect("built-in automaton parses");
    product(&base, o)
}

fn quote(name: &str) -> String {
    if name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        name.to_string()
    } else {
        format!("\"{name}\"")
    }
}

pub(crate) fn sort_name(s: Sort) -> &'static str {
    match s {
        Sort::Thread => "thread",
        Sort::Address => "address",
        Sort::Data => "data",
    }
}

#[cfg(test)]
mod tests;

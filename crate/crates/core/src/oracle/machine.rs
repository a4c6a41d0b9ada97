//! Configurations and the step relation of the SMR-restricted semantics.

use std::collections::HashMap;

use crate::automata::{EventKind, LocSet, SmrAutomaton, Sort};
use crate::lang::{Command, Cond, Program};
use crate::rules::SafeCallTable;

use super::cfa::Cfa;
use super::{Budget, Mode, OracleError, RaceKind, Violation};

pub(crate) const IDLE: u16 = u16::MAX;
pub(crate) const SEG: u8 = 0;
/// Run once by thread 0 before the clients start.
pub const INIT_PROC: &str = "init";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) struct State {
    pub pc: Box<[u16]>,
    pub ptr: Box<[u8]>,
    pub data: Box<[u8]>,
    /// `next` and `data` fields, indexed by address; slot 0 is unused.
    pub next: Box<[u8]>,
    pub cell: Box<[u8]>,
    /// Pointer slots first, then one bit per `a.next`.
    pub valid: u128,
    pub fresh: u8,
    pub freed: u8,
    pub retired: u8,
    pub ever_freed: u8,
    /// 0 when free, else owning thread + 1.
    pub lock: u8,
    /// Thread 0 is still running the `init` procedure.
    pub booting: bool,
    /// Per thread and angel slot: (required members, meet of activity snapshots).
    pub angels: Box<[(u8, u8)]>,
    pub obs: Box<[LocSet]>,
}

impl State {
    pub fn projection(&self) -> impl std::hash::Hash + '_ {
        (
            &self.pc,
            &self.ptr,
            &self.data,
            &self.next,
            &self.cell,
            self.valid,
            (self.fresh, self.freed, self.retired, self.ever_freed, self.lock, self.booting),
            &self.angels,
        )
    }
}

/// Variable reference resolved against a thread frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum V {
    Shared(u16),
    Local(u16),
}

#[derive(Clone, Debug)]
pub(crate) enum RCond {
    True,
    Eq(V, V),
    Neq(V, V),
    Data(V),
    Not(Box<RCond>),
    And(Box<RCond>, Box<RCond>),
    Or(Box<RCond>, Box<RCond>),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Arg {
    Thread,
    Ptr(V),
    Data(V),
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Const(u8),
    Copy(V),
    Any,
}

#[derive(Clone, Debug)]
pub(crate) enum RCom {
    Assign(V, V),
    Load(V, V),
    Store(V, V),
    DLoad(V, V),
    DStore(V, V),
    DOp(V, Op),
    Malloc(V),
    AssumeEq(V, V),
    AssumeNeq(V, V),
    AssumeAny,
    Begin,
    End,
    Enter {
        func: String,
        event: Option<usize>,
        args: Vec<Arg>,
        ptrs: Vec<V>,
    },
    Exit(Option<usize>),
    InvAngel(u16),
    InvEq(V, V),
    InvMember(V, u16),
    InvActivePtr(V),
    InvActiveAngel(u16),
    Assert(RCond),
    AssumeCond(RCond),
    Havoc(V),
}

/// Names and slot layout of program variables.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub shared_ptr: Vec<String>,
    pub shared_data: Vec<String>,
    pub locals: Vec<Vec<String>>,
    pub ldata: Vec<Vec<String>>,
    pub angels: Vec<Vec<String>>,
    pub n_lptr: usize,
    pub n_ldata: usize,
    pub n_angel: usize,
}

pub(crate) struct Machine<'a> {
    pub aut: &'a SmrAutomaton,
    pub table: SafeCallTable,
    pub budget: Budget,
    pub mode: Mode,
    pub cfa: Cfa,
    pub coms: Vec<RCom>,
    pub costs: Vec<u8>,
    pub layout: Layout,
    pub phis: Vec<Vec<u32>>,
    /// Index of the `init` procedure.
    pub init: Option<usize>,
    accepting: LocSet,
    n_ptr: usize,
    all_adr: u8,
}

/// A move of one thread or of the environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Action {
    Edge { thread: u8, edge: u32, start: bool },
    Free(u8),
}

pub(crate) struct Move {
    pub state: State,
    pub action: Action,
    pub cost: u8,
}

pub(crate) struct Outcome {
    pub moves: Vec<Move>,
    /// Enabled violating actions with their cost.
    pub violations: Vec<(Action, Violation, u8)>,
}

fn bit(a: u8) -> u8 {
    1u8 << a
}

fn ghost_name(proc_data: &[String], v: &str) -> bool {
    v == crate::instrument::RETIRE_PTR
        || v == crate::instrument::RETIRE_FLAG
        || v.starts_with("included_")
        || v.starts_with("failed_")
        || proc_data.iter().any(|d| *d == crate::instrument::included(v))
}

fn memory_cost(c: &Command) -> u8 {
    use Command::*;
    match c {
        PtrAssign(..) | PtrLoad(..) | PtrStore(..) | DataLoad(..) | DataStore(..) | DataOp(..)
        | Malloc(_) | AssumeEq(..) | AssumeNeq(..) | AssumePred(..) => 1,
        _ => 0,
    }
}

impl<'a> Machine<'a> {
    pub fn new(prog: &Program, aut: &'a SmrAutomaton, budget: &Budget, mode: Mode) -> Result<Self, OracleError> {
        crate::lang::validate(prog)?;
        budget.check()?;
        let layout = Layout {
            shared_ptr: prog.shared.clone(),
            shared_data: prog.shared_data.clone(),
            locals: prog.procs.iter().map(|p| p.locals.clone()).collect(),
            ldata: prog.procs.iter().map(|p| p.data.clone()).collect(),
            angels: prog.procs.iter().map(|p| p.angels.clone()).collect(),
            n_lptr: prog.procs.iter().map(|p| p.locals.len()).max().unwrap_or(0),
            n_ldata: prog.procs.iter().map(|p| p.data.len()).max().unwrap_or(0),
            n_angel: prog.procs.iter().map(|p| p.angels.len()).max().unwrap_or(0),
        };
        let n_ptr = layout.shared_ptr.len() + budget.threads * layout.n_lptr;
        if n_ptr + budget.addresses + 1 > 128 {
            return Err(OracleError::TooLarge(format!(
                "{n_ptr} pointer slots exceed the validity bitmask"
            )));
        }
        let bodies: Vec<_> = prog.procs.iter().map(|p| &p.body).collect();
        let cfa = Cfa::build(&bodies);
        if cfa.actions.len() >= IDLE as usize {
            return Err(OracleError::TooLarge("control-flow graph too large".into()));
        }
        let mut coms = Vec::new();
        let mut costs = Vec::new();
        for e in &cfa.edges {
            let p = &prog.procs[e.proc];
            let ghost = e.com.vars().iter().any(|v| ghost_name(&p.data, v));
            costs.push(if p.name == INIT_PROC {
                0
            } else if e.com == Command::BeginAtomic {
                1
            } else if ghost || e.in_atomic {
                0
            } else {
                memory_cost(&e.com)
            });
            coms.push(resolve(&layout, e.proc, &e.com, aut)?);
        }
        let mut phis: Vec<Vec<u32>> = vec![vec![]];
        for v in &aut.vars {
            let range: Vec<u32> = match v.sort {
                Sort::Thread => (0..budget.threads as u32).collect(),
                Sort::Address => (1..=budget.addresses as u32).collect(),
                Sort::Data => (0..budget.data as u32).collect(),
            };
            phis = phis
                .into_iter()
                .flat_map(|p| {
                    range.iter().map(move |&x| {
                        let mut q = p.clone();
                        q.push(x);
                        q
                    })
                })
                .collect();
        }
        Ok(Machine {
            aut,
            table: SafeCallTable::from_automaton(aut),
            budget: budget.clone(),
            mode,
            cfa,
            coms,
            costs,
            layout,
            phis,
            init: prog.procs.iter().position(|p| p.name == INIT_PROC),
            accepting: aut.accepting(),
            n_ptr,
            all_adr: ((1u16 << (budget.addresses + 1)) - 2) as u8,
        })
    }

    pub fn initial(&self) -> State {
        let t = self.budget.threads;
        let n = self.budget.addresses;
        let angels = if self.mode == Mode::Invariants { t * self.layout.n_angel } else { 0 };
        State {
            pc: vec![IDLE; t].into(),
            ptr: vec![SEG; self.n_ptr].into(),
            data: vec![0; self.layout.shared_data.len() + t * self.layout.n_ldata].into(),
            next: vec![SEG; n + 1].into(),
            cell: vec![0; n + 1].into(),
            // every pointer variable starts valid; no field does
            valid: (1u128 << self.n_ptr) - 1,
            fresh: self.all_adr,
            freed: 0,
            retired: 0,
            ever_freed: 0,
            lock: 0,
            booting: self.init.is_some_and(|i| self.cfa.entry[i].is_some()),
            angels: vec![(0, u8::MAX); angels].into(),
            obs: vec![LocSet::single(self.aut.initial); self.phis.len()].into(),
        }
    }

    fn pslot(&self, t: usize, v: V) -> usize {
        match v {
            V::Shared(i) => i as usize,
            V::Local(k) => self.layout.shared_ptr.len() + t * self.layout.n_lptr + k as usize,
        }
    }

    fn dslot(&self, t: usize, v: V) -> usize {
        match v {
            V::Shared(i) => i as usize,
            V::Local(k) => self.layout.shared_data.len() + t * self.layout.n_ldata + k as usize,
        }
    }

    fn aslot(&self, t: usize, k: u16) -> usize {
        t * self.layout.n_angel + k as usize
    }

    fn field_bit(&self, a: u8) -> u128 {
        1u128 << (self.n_ptr + a as usize)
    }

    fn is_valid(&self, s: &State, slot: usize) -> bool {
        s.valid >> slot & 1 == 1
    }

    fn set_valid(&self, s: &mut State, slot: usize, v: bool) {
        if v {
            s.valid |= 1u128 << slot;
        } else {
            s.valid &= !(1u128 << slot);
        }
    }

    fn set_field_valid(&self, s: &mut State, a: u8, v: bool) {
        if v {
            s.valid |= self.field_bit(a);
        } else {
            s.valid &= !self.field_bit(a);
        }
    }

    pub fn active_mask(&self, s: &State) -> u8 {
        // seg is never freed or retired
        !(s.freed | s.retired)
    }

    fn reset_frame(&self, s: &mut State, t: usize) {
        let base = self.layout.shared_ptr.len() + t * self.layout.n_lptr;
        for k in 0..self.layout.n_lptr {
            s.ptr[base + k] = SEG;
            self.set_valid(s, base + k, true);
        }
        let base = self.layout.shared_data.len() + t * self.layout.n_ldata;
        for k in 0..self.layout.n_ldata {
            s.data[base + k] = 0;
        }
        if !s.angels.is_empty() {
            for k in 0..self.layout.n_angel {
                s.angels[t * self.layout.n_angel + k] = (0, u8::MAX);
            }
        }
    }

    fn eval(&self, s: &State, t: usize, c: &RCond) -> bool {
        match c {
            RCond::True => true,
            RCond::Eq(p, q) => s.ptr[self.pslot(t, *p)] == s.ptr[self.pslot(t, *q)],
            RCond::Neq(p, q) => s.ptr[self.pslot(t, *p)] != s.ptr[self.pslot(t, *q)],
            RCond::Data(u) => s.data[self.dslot(t, *u)] != 0,
            RCond::Not(c) => !self.eval(s, t, c),
            RCond::And(a, b) => self.eval(s, t, a) && self.eval(s, t, b),
            RCond::Or(a, b) => self.eval(s, t, a) || self.eval(s, t, b),
        }
    }

    /// Strict and relaxed pointer-race classification of thread `t` executing `c`.
    pub fn race_of(&self, s: &State, t: usize, c: &RCom) -> (Option<RaceKind>, Option<RaceKind>) {
        let valid = |v: V| self.is_valid(s, self.pslot(t, v));
        let both = |k| (Some(k), Some(k));
        match c {
            RCom::Load(_, q) | RCom::DLoad(_, q) if !valid(*q) => both(RaceKind::UnsafeAccess),
            RCom::Store(p, _) | RCom::DStore(p, _) if !valid(*p) => both(RaceKind::UnsafeAccess),
            RCom::AssumeEq(p, q) => {
                if valid(*p) && valid(*q) {
                    return (None, None);
                }
                let a = s.ptr[self.pslot(t, *p)];
                let relaxed = a != SEG && s.ever_freed & bit(a) != 0;
                (
                    Some(RaceKind::UnsafeAssumption),
                    relaxed.then_some(RaceKind::UnsafeAssumption),
                )
            }
            RCom::Enter { func, ptrs, .. } => {
                let mut mask = 0u32;
                for (i, p) in ptrs.iter().enumerate() {
                    if valid(*p) {
                        mask |= 1 << i;
                    }
                }
                let all = ptrs.len() as u32;
                if func == "retire" {
                    if mask.count_ones() < all {
                        return both(RaceKind::UnsafeRetire);
                    }
                    return (None, None);
                }
                match self.table.lookup(func, mask) {
                    Ok(false) => both(RaceKind::UnsafeCall),
                    _ => (None, None),
                }
            }
            _ => (None, None),
        }
    }

    /// Advance every observer valuation; `None` when the history is no longer allowed.
    fn observe(&self, s: &mut State, e: usize, params: &[u32]) -> Option<()> {
        for (j, phi) in self.phis.iter().enumerate() {
            let nxt = self.aut.step_event(s.obs[j], phi, e, params);
            if !nxt.inter(self.accepting).is_empty() {
                return None;
            }
            s.obs[j] = nxt;
        }
        Some(())
    }

    fn check_invariants(&self, s: &State) {
        assert_eq!(s.fresh & s.retired, 0, "fresh and retired overlap");
        for slot in 0..self.n_ptr {
            let a = s.ptr[slot];
            if a != SEG && s.freed & bit(a) != 0 {
                assert!(!self.is_valid(s, slot), "valid pointer to freed address");
            }
        }
        for b in 1..=self.budget.addresses as u8 {
            let a = s.next[b as usize];
            if a != SEG && s.freed & bit(a) != 0 {
                assert!(s.valid & self.field_bit(b) == 0, "valid field to freed address");
            }
        }
    }

    pub fn successors(&self, s: &State) -> Outcome {
        let mut out = Outcome {
            moves: Vec::new(),
            violations: Vec::new(),
        };
        if s.booting {
            let pc = s.pc[0];
            if pc == IDLE {
                let entry = self.cfa.entry[self.init.unwrap()].unwrap();
                for &e in &self.cfa.actions[entry as usize] {
                    self.apply(s, 0, e, true, &mut out);
                }
            } else {
                for &e in &self.cfa.actions[pc as usize] {
                    self.apply(s, 0, e, false, &mut out);
                }
            }
            for m in &mut out.moves {
                m.state.booting = m.state.pc[0] != IDLE;
            }
            return out;
        }
        for t in 0..self.budget.threads {
            if s.lock != 0 && s.lock as usize != t + 1 {
                continue;
            }
            let pc = s.pc[t];
            if pc != IDLE {
                for &e in &self.cfa.actions[pc as usize] {
                    self.apply(s, t, e, false, &mut out);
                }
            }
            if pc == IDLE || self.cfa.can_finish[pc as usize] {
                let mut fresh_call = s.clone();
                self.reset_frame(&mut fresh_call, t);
                for (p, entry) in self.cfa.entry.iter().enumerate() {
                    if Some(p) == self.init {
                        continue;
                    }
                    for &e in entry.iter().flat_map(|n| &self.cfa.actions[*n as usize]) {
                        self.apply(&fresh_call, t, e, true, &mut out);
                    }
                }
            }
        }
        if s.lock == 0 {
            for a in 1..=self.budget.addresses as u8 {
                if self.budget.free & bit(a) != 0 {
                    if let Some(n) = self.free(s, a) {
                        out.moves.push(Move {
                            state: n,
                            action: Action::Free(a),
                            cost: 1,
                        });
                    }
                }
            }
        }
        for m in &out.moves {
            self.check_invariants(&m.state);
        }
        out
    }

    fn free(&self, s: &State, a: u8) -> Option<State> {
        let mut n = s.clone();
        let e = self.aut.free_event();
        if let Some(e) = e {
            self.observe(&mut n, e, &[a as u32])?;
        }
        n.freed |= bit(a);
        n.ever_freed |= bit(a);
        n.fresh &= !bit(a);
        n.retired &= !bit(a);
        for slot in 0..self.n_ptr {
            if n.ptr[slot] == a {
                self.set_valid(&mut n, slot, false);
            }
        }
        for b in 1..=self.budget.addresses as u8 {
            if n.next[b as usize] == a {
                self.set_field_valid(&mut n, b, false);
            }
        }
        self.set_field_valid(&mut n, a, false);
        Some(n)
    }

    fn apply(&self, s: &State, t: usize, e: u32, start: bool, out: &mut Outcome) {
        let c = &self.coms[e as usize];
        let action = Action::Edge {
            thread: t as u8,
            edge: e,
            start,
        };
        let before = out.moves.len();
        let mut viol = None;
        match self.mode {
            Mode::Races | Mode::RelaxedRaces => {
                let (strict, relaxed) = self.race_of(s, t, c);
                let k = if self.mode == Mode::Races { strict } else { relaxed };
                viol = k.map(|kind| Violation::Race { kind });
            }
            Mode::Asserts => {
                if let RCom::Assert(cond) = c {
                    if !self.eval(s, t, cond) {
                        viol = Some(Violation::Assert);
                    }
                }
            }
            Mode::Invariants => {}
        }
        let to = self.cfa.edges[e as usize].to.unwrap_or(IDLE);
        let push = |mut n: State, out: &mut Outcome| {
            n.pc[t] = to;
            out.moves.push(Move {
                state: n,
                action,
                cost: self.costs[e as usize],
            });
        };
        let ps = |v: V| self.pslot(t, v);
        let ds = |v: V| self.dslot(t, v);
        match c {
            RCom::Assign(p, q) => {
                let mut n = s.clone();
                n.ptr[ps(*p)] = s.ptr[ps(*q)];
                self.set_valid(&mut n, ps(*p), self.is_valid(s, ps(*q)));
                push(n, out);
            }
            RCom::Load(p, q) => {
                let a = s.ptr[ps(*q)];
                if a != SEG {
                    let mut n = s.clone();
                    n.ptr[ps(*p)] = s.next[a as usize];
                    self.set_valid(&mut n, ps(*p), s.valid & self.field_bit(a) != 0);
                    push(n, out);
                }
            }
            RCom::Store(p, q) => {
                let a = s.ptr[ps(*p)];
                if a != SEG {
                    let mut n = s.clone();
                    n.next[a as usize] = s.ptr[ps(*q)];
                    self.set_field_valid(&mut n, a, self.is_valid(s, ps(*q)));
                    push(n, out);
                }
            }
            RCom::DLoad(u, q) => {
                let a = s.ptr[ps(*q)];
                if a != SEG {
                    let mut n = s.clone();
                    n.data[ds(*u)] = s.cell[a as usize];
                    push(n, out);
                }
            }
            RCom::DStore(p, u) => {
                let a = s.ptr[ps(*p)];
                if a != SEG {
                    let mut n = s.clone();
                    n.cell[a as usize] = s.data[ds(*u)];
                    push(n, out);
                }
            }
            RCom::DOp(u, op) => {
                let vals: Vec<u8> = match op {
                    Op::Const(k) => vec![k % self.budget.data as u8],
                    Op::Copy(v) => vec![s.data[ds(*v)]],
                    Op::Any => (0..self.budget.data as u8).collect(),
                };
                for d in vals {
                    let mut n = s.clone();
                    n.data[ds(*u)] = d;
                    push(n, out);
                }
            }
            RCom::Malloc(p) => {
                let avail = s.fresh | (s.freed & self.budget.reuse);
                for a in 1..=self.budget.addresses as u8 {
                    if avail & bit(a) == 0 {
                        continue;
                    }
                    for d in 0..self.budget.data as u8 {
                        let mut n = s.clone();
                        n.ptr[ps(*p)] = a;
                        n.next[a as usize] = SEG;
                        n.cell[a as usize] = d;
                        n.fresh &= !bit(a);
                        n.freed &= !bit(a);
                        self.set_valid(&mut n, ps(*p), true);
                        self.set_field_valid(&mut n, a, true);
                        push(n, out);
                    }
                }
            }
            RCom::AssumeEq(p, q) => {
                if s.ptr[ps(*p)] == s.ptr[ps(*q)] {
                    let mut n = s.clone();
                    if self.is_valid(s, ps(*p)) || self.is_valid(s, ps(*q)) {
                        self.set_valid(&mut n, ps(*p), true);
                        self.set_valid(&mut n, ps(*q), true);
                    }
                    push(n, out);
                }
            }
            RCom::AssumeNeq(p, q) => {
                if s.ptr[ps(*p)] != s.ptr[ps(*q)] {
                    push(s.clone(), out);
                }
            }
            RCom::AssumeAny => push(s.clone(), out),
            RCom::Begin => {
                let mut n = s.clone();
                n.lock = t as u8 + 1;
                push(n, out);
            }
            RCom::End => {
                let mut n = s.clone();
                n.lock = 0;
                push(n, out);
            }
            RCom::Enter {
                func,
                event,
                args,
                ptrs,
            } => {
                if ptrs.iter().any(|p| s.ptr[ps(*p)] == SEG) {
                    return;
                }
                let mut n = s.clone();
                if let Some(e) = event {
                    let params: Vec<u32> = args
                        .iter()
                        .map(|a| match a {
                            Arg::Thread => t as u32,
                            Arg::Ptr(p) => s.ptr[ps(*p)] as u32,
                            Arg::Data(u) => s.data[ds(*u)] as u32,
                        })
                        .collect();
                    if self.observe(&mut n, *e, &params).is_none() {
                        return;
                    }
                }
                if func == "retire" {
                    for p in ptrs {
                        n.retired |= bit(s.ptr[ps(*p)]);
                    }
                }
                push(n, out);
            }
            RCom::Exit(event) => {
                let mut n = s.clone();
                if let Some(e) = event {
                    if self.observe(&mut n, *e, &[t as u32]).is_none() {
                        return;
                    }
                }
                push(n, out);
            }
            RCom::InvAngel(r) => {
                let mut n = s.clone();
                if self.mode == Mode::Invariants {
                    n.angels[self.aslot(t, *r)] = (0, u8::MAX);
                }
                push(n, out);
            }
            RCom::InvMember(p, r) => {
                let mut n = s.clone();
                if self.mode == Mode::Invariants {
                    let slot = &mut n.angels[self.aslot(t, *r)];
                    slot.0 |= bit(s.ptr[ps(*p)]);
                    if slot.0 & !slot.1 != 0 {
                        viol = Some(Violation::Invariant);
                    }
                }
                push(n, out);
            }
            RCom::InvActiveAngel(r) => {
                let mut n = s.clone();
                if self.mode == Mode::Invariants {
                    let act = self.active_mask(s);
                    let slot = &mut n.angels[self.aslot(t, *r)];
                    slot.1 &= act;
                    if slot.0 & !slot.1 != 0 {
                        viol = Some(Violation::Invariant);
                    }
                }
                push(n, out);
            }
            RCom::InvEq(p, q) => {
                if self.mode == Mode::Invariants && s.ptr[ps(*p)] != s.ptr[ps(*q)] {
                    viol = Some(Violation::Invariant);
                }
                push(s.clone(), out);
            }
            RCom::InvActivePtr(p) => {
                if self.mode == Mode::Invariants && self.active_mask(s) & bit(s.ptr[ps(*p)]) == 0 {
                    viol = Some(Violation::Invariant);
                }
                push(s.clone(), out);
            }
            RCom::Assert(_) => push(s.clone(), out),
            RCom::AssumeCond(cond) => {
                if self.eval(s, t, cond) {
                    push(s.clone(), out);
                }
            }
            RCom::Havoc(p) => {
                for a in 0..=self.budget.addresses as u8 {
                    let mut n = s.clone();
                    n.ptr[ps(*p)] = a;
                    self.set_valid(&mut n, ps(*p), false);
                    push(n, out);
                }
            }
        }
        if out.moves.len() > before {
            if let Some(v) = viol {
                out.violations.push((action, v, self.costs[e as usize]));
            }
        }
    }

    // ---- rendering ----

    pub fn thread_proc(&self, edge: u32) -> usize {
        self.cfa.edges[edge as usize].proc
    }

    fn ptr_name(&self, slot: usize, procs: &[Option<usize>]) -> Option<String> {
        let s = self.layout.shared_ptr.len();
        if slot < s {
            return Some(self.layout.shared_ptr[slot].clone());
        }
        let (t, k) = ((slot - s) / self.layout.n_lptr, (slot - s) % self.layout.n_lptr);
        let p = procs[t]?;
        self.layout.locals[p].get(k).map(|n| format!("{n}@t{t}"))
    }

    fn data_name(&self, slot: usize, procs: &[Option<usize>]) -> Option<String> {
        let s = self.layout.shared_data.len();
        if slot < s {
            return Some(self.layout.shared_data[slot].clone());
        }
        let (t, k) = ((slot - s) / self.layout.n_ldata, (slot - s) % self.layout.n_ldata);
        let p = procs[t]?;
        self.layout.ldata[p].get(k).map(|n| format!("{n}@t{t}"))
    }

    /// Human-readable difference between consecutive states.
    pub fn describe_update(&self, a: &State, b: &State, procs: &[Option<usize>]) -> String {
        let adr = |x: u8| if x == SEG { "seg".to_string() } else { format!("a{x}") };
        let mut parts = Vec::new();
        for i in 0..self.n_ptr {
            let vb = self.is_valid(b, i);
            if a.ptr[i] != b.ptr[i] || self.is_valid(a, i) != vb {
                if let Some(n) = self.ptr_name(i, procs) {
                    parts.push(format!("{n}={}{}", adr(b.ptr[i]), if vb { "" } else { " (invalid)" }));
                }
            }
        }
        for i in 0..a.data.len() {
            if a.data[i] != b.data[i] {
                if let Some(n) = self.data_name(i, procs) {
                    parts.push(format!("{n}={}", b.data[i]));
                }
            }
        }
        for x in 1..=self.budget.addresses as u8 {
            let i = x as usize;
            if a.next[i] != b.next[i] || (a.valid ^ b.valid) & self.field_bit(x) != 0 {
                let vb = b.valid & self.field_bit(x) != 0;
                parts.push(format!("a{x}.next={}{}", adr(b.next[i]), if vb { "" } else { " (invalid)" }));
            }
            if a.cell[i] != b.cell[i] {
                parts.push(format!("a{x}.data={}", b.cell[i]));
            }
            if a.freed & bit(x) == 0 && b.freed & bit(x) != 0 {
                parts.push(format!("freed a{x}"));
            }
            if a.retired & bit(x) == 0 && b.retired & bit(x) != 0 {
                parts.push(format!("retired a{x}"));
            }
        }
        if a.lock != b.lock {
            parts.push(if b.lock == 0 { "unlock".into() } else { format!("lock t{}", b.lock - 1) });
        }
        parts.join(", ")
    }

    /// History event emitted by an action, if any.
    #[cfg(test)]
    pub fn event_of(&self, s: &State, action: Action) -> Option<crate::automata::Event> {
        use crate::automata::Event;
        match action {
            Action::Free(a) => Some(Event::free(a as u32)),
            Action::Edge { thread, edge, .. } => {
                let t = thread as usize;
                match &self.coms[edge as usize] {
                    RCom::Enter { func, args, .. } => {
                        let values = args
                            .iter()
                            .filter_map(|a| match a {
                                Arg::Thread => None,
                                Arg::Ptr(p) => Some(s.ptr[self.pslot(t, *p)] as u32),
                                Arg::Data(u) => Some(s.data[self.dslot(t, *u)] as u32),
                            })
                            .collect();
                        Some(Event::enter(func, thread as u32, values))
                    }
                    RCom::Exit(_) => match &self.cfa.edges[edge as usize].com {
                        Command::Exit(f) => Some(Event::exit(f, thread as u32)),
                        _ => None,
                    },
                    _ => None,
                }
            }
        }
    }

    /// Frame of thread `t` as it is right before `action`, after any call reset.
    pub fn pre_state(&self, s: &State, action: Action) -> State {
        match action {
            Action::Edge { thread, start: true, .. } => {
                let mut n = s.clone();
                self.reset_frame(&mut n, thread as usize);
                n
            }
            Action::Edge { .. } | Action::Free(_) => s.clone(),
        }
    }
}

fn resolve(l: &Layout, proc: usize, c: &Command, aut: &SmrAutomaton) -> Result<RCom, OracleError> {
    let ptr_ix: HashMap<&str, V> = l.shared_ptr.iter().enumerate().map(|(i, v)| (v.as_str(), V::Shared(i as u16)))
        .chain(l.locals[proc].iter().enumerate().map(|(i, v)| (v.as_str(), V::Local(i as u16))))
        .collect();
    let data_ix: HashMap<&str, V> = l.shared_data.iter().enumerate().map(|(i, v)| (v.as_str(), V::Shared(i as u16)))
        .chain(l.ldata[proc].iter().enumerate().map(|(i, v)| (v.as_str(), V::Local(i as u16))))
        .collect();
    let unsupported = |v: &str| OracleError::Unsupported(format!("`{v}` in `{c}`"));
    let p = |v: &str| ptr_ix.get(v).copied().ok_or_else(|| unsupported(v));
    let d = |v: &str| data_ix.get(v).copied().ok_or_else(|| unsupported(v));
    let a = |v: &str| {
        l.angels[proc]
            .iter()
            .position(|x| x == v)
            .map(|i| i as u16)
            .ok_or_else(|| unsupported(v))
    };
    fn cond(
        c: &Cond,
        p: &dyn Fn(&str) -> Result<V, OracleError>,
        d: &dyn Fn(&str) -> Result<V, OracleError>,
    ) -> Result<RCond, OracleError> {
        Ok(match c {
            Cond::True => RCond::True,
            Cond::PtrEq(a, b) => RCond::Eq(p(a)?, p(b)?),
            Cond::PtrNeq(a, b) => RCond::Neq(p(a)?, p(b)?),
            Cond::Data(u) => RCond::Data(d(u)?),
            Cond::Not(x) => RCond::Not(Box::new(cond(x, p, d)?)),
            Cond::And(x, y) => RCond::And(Box::new(cond(x, p, d)?), Box::new(cond(y, p, d)?)),
            Cond::Or(x, y) => RCond::Or(Box::new(cond(x, p, d)?), Box::new(cond(y, p, d)?)),
        })
    }
    use Command::*;
    Ok(match c {
        Skip => RCom::AssumeAny,
        PtrAssign(x, y) => RCom::Assign(p(x)?, p(y)?),
        PtrLoad(x, y) => RCom::Load(p(x)?, p(y)?),
        PtrStore(x, y) => RCom::Store(p(x)?, p(y)?),
        DataLoad(u, q) => RCom::DLoad(d(u)?, p(q)?),
        DataStore(q, u) => RCom::DStore(p(q)?, d(u)?),
        DataOp(u, op, args) => {
            let o = match (op.as_str(), args.as_slice()) {
                ("true", []) => Op::Const(1),
                ("false", []) => Op::Const(0),
                ("id", [v]) => Op::Copy(d(v)?),
                (n, []) if n.parse::<u8>().is_ok() => Op::Const(n.parse().unwrap()),
                _ => Op::Any,
            };
            RCom::DOp(d(u)?, o)
        }
        Malloc(x) => RCom::Malloc(p(x)?),
        AssumeEq(x, y) => RCom::AssumeEq(p(x)?, p(y)?),
        AssumeNeq(x, y) => RCom::AssumeNeq(p(x)?, p(y)?),
        AssumePred(..) => RCom::AssumeAny,
        BeginAtomic => RCom::Begin,
        EndAtomic => RCom::End,
        Enter(f, ps, us) => {
            let ptrs: Vec<V> = ps.iter().map(|x| p(x)).collect::<Result<_, _>>()?;
            let datas: Vec<V> = us.iter().map(|x| d(x)).collect::<Result<_, _>>()?;
            let event = aut.event_index(EventKind::Enter, f);
            let mut args = Vec::new();
            if let Some(e) = event {
                let sig = &aut.events[e];
                let (mut i, mut j) = (0, 0);
                for s in &sig.params {
                    match s {
                        Sort::Thread => args.push(Arg::Thread),
                        Sort::Address => {
                            let v = ptrs.get(i).ok_or_else(|| arity(f))?;
                            args.push(Arg::Ptr(*v));
                            i += 1;
                        }
                        Sort::Data => {
                            let v = datas.get(j).ok_or_else(|| arity(f))?;
                            args.push(Arg::Data(*v));
                            j += 1;
                        }
                    }
                }
                if i != ptrs.len() || j != datas.len() || !sig.has_thread() {
                    return Err(arity(f));
                }
            }
            RCom::Enter {
                func: f.clone(),
                event,
                args,
                ptrs,
            }
        }
        Exit(f) => RCom::Exit(aut.event_index(EventKind::Exit, f)),
        InvAngel(r) => RCom::InvAngel(a(r)?),
        InvEq(x, y) => RCom::InvEq(p(x)?, p(y)?),
        InvMember(x, r) => RCom::InvMember(p(x)?, a(r)?),
        InvActivePtr(x) => RCom::InvActivePtr(p(x)?),
        InvActiveAngel(r) => RCom::InvActiveAngel(a(r)?),
        Assert(c) => RCom::Assert(cond(c, &p, &d)?),
        AssumeCond(c) => RCom::AssumeCond(cond(c, &p, &d)?),
        Havoc(x) => RCom::Havoc(p(x)?),
    })
}

fn arity(f: &str) -> OracleError {
    OracleError::Unsupported(format!("call of `{f}` does not match the automaton's signature"))
}

//! Bounded exhaustive exploration of the SMR-restricted semantics.
//!
//! Threads repeatedly call procedures of the program (the most general
//! client); the environment frees addresses in `X`, malloc reuses freed
//! addresses in `Y`. The step bound counts scheduling units: an atomic block
//! is one step, as is a memory action (assignment, load, store, allocation,
//! assumption) outside one, and an environment free. SMR calls, annotations
//! and instrumentation ghost code outside atomic blocks are free of cost.
//! A procedure named `init` is run once by thread 0 before any client call;
//! its steps are not counted.

mod cfa;
mod machine;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use hashbrown::HashTable;
use rayon::prelude::*;
use rustc_hash::FxHasher;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::automata::SmrAutomaton;
use crate::lang::{LangError, Program};

use machine::{Action, Machine, State};
pub use machine::INIT_PROC;

pub const MAX_ADDRESSES: usize = 7;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("unsupported by the explorer: {0}")]
    Unsupported(String),
    #[error("program too large for the explorer: {0}")]
    TooLarge(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Pointer races.
    Races,
    /// Pointer races with the relaxed reading of unsafe assumptions.
    RelaxedRaces,
    /// Invariant annotations.
    Invariants,
    /// `assert` commands.
    Asserts,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "races" | "prf" => Ok(Mode::Races),
            "relaxed" | "relaxed-races" => Ok(Mode::RelaxedRaces),
            "invariants" => Ok(Mode::Invariants),
            "asserts" => Ok(Mode::Asserts),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Budget {
    pub threads: usize,
    pub addresses: usize,
    /// Size of the data domain.
    pub data: usize,
    pub steps: usize,
    /// Addresses the environment may free (`X`), as a bitmask over 1..=addresses.
    pub free: u8,
    /// Freed addresses malloc may hand out again (`Y`).
    pub reuse: u8,
    pub max_states: usize,
    /// Worker threads; 0 uses the global pool.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            threads: 2,
            addresses: 3,
            data: 2,
            steps: 20,
            free: 0,
            reuse: 0,
            max_states: 2_000_000,
            jobs: 0,
        }
    }
}

impl Budget {
    /// Mask of all addresses.
    pub fn all(&self) -> u8 {
        ((1u16 << (self.addresses + 1)) - 2) as u8
    }

    /// `X = Y = Adr`.
    pub fn with_frees(mut self) -> Self {
        self.free = self.all();
        self.reuse = self.all();
        self
    }

    pub(crate) fn check(&self) -> Result<(), OracleError> {
        let err = |m: &str| Err(OracleError::Budget(m.to_string()));
        if self.threads == 0 || self.threads > 8 {
            return err("thread count must be in 1..=8");
        }
        if self.addresses == 0 || self.addresses > MAX_ADDRESSES {
            return err("address count must be in 1..=7");
        }
        if self.data < 2 || self.data > 255 {
            return err("data domain must have between 2 and 255 values");
        }
        if self.free & !self.all() != 0 || self.reuse & !self.all() != 0 {
            return err("X and Y must be subsets of the address pool");
        }
        if self.reuse & !self.free != 0 {
            return err("Y must be a subset of X");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RaceKind {
    UnsafeAccess,
    UnsafeAssumption,
    UnsafeRetire,
    UnsafeCall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Violation {
    Race { kind: RaceKind },
    Invariant,
    Assert,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WitnessStep {
    pub thread: String,
    pub command: String,
    pub update: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Clean,
    Violation,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExplorationReport {
    pub verdict: Verdict,
    pub mode: Mode,
    pub violation: Option<Violation>,
    pub witness: Vec<WitnessStep>,
    pub states: usize,
    /// Depth of the deepest explored layer.
    pub steps: usize,
    /// True when the step bound cut off successors.
    pub step_bound_hit: bool,
    /// True when `max_states` stopped the search early.
    pub budget_exhausted: bool,
    #[serde(serialize_with = "hex")]
    pub fingerprint: u64,
    pub budget: Budget,
}

fn hex<S: serde::Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:016x}"))
}

impl ExplorationReport {
    pub fn clean(&self) -> bool {
        self.verdict == Verdict::Clean
    }

    /// Every reachable state within the bound was visited.
    pub fn complete(&self) -> bool {
        !self.budget_exhausted
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or_else(|_| json!({}))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        match &self.violation {
            None => s.push_str("clean"),
            Some(Violation::Race { kind }) => s.push_str(&format!("pointer race ({kind:?})")),
            Some(Violation::Invariant) => s.push_str("invariant violated"),
            Some(Violation::Assert) => s.push_str("assertion failed"),
        }
        s.push_str(&format!(
            " after {} states, depth {}{}{}\n",
            self.states,
            self.steps,
            if self.step_bound_hit { ", step bound reached" } else { "" },
            if self.budget_exhausted { ", STATE BUDGET EXHAUSTED" } else { "" }
        ));
        for w in &self.witness {
            s.push_str(&format!("  [{}] {}", w.thread, w.command));
            if !w.update.is_empty() {
                s.push_str(&format!("    {{{}}}", w.update));
            }
            s.push('\n');
        }
        s
    }
}

/// Raw result of a search, kept for inspection by tests.
pub(crate) struct Search {
    pub states: Vec<State>,
    pub parent: Vec<Option<(u32, Action)>>,
    pub violation: Option<(u32, Action, Violation)>,
    pub depth: usize,
    pub step_bound_hit: bool,
    pub exhausted: bool,
}

fn hash_of<T: Hash>(v: &T) -> u64 {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

fn fx<T: Hash>(v: &T) -> u64 {
    let mut h = FxHasher::default();
    v.hash(&mut h);
    h.finish()
}

/// Visited states, stored once in `states` and indexed by hash.
struct Visited {
    table: HashTable<u32>,
    hashes: Vec<u64>,
}

impl Visited {
    fn contains(&self, states: &[State], h: u64, s: &State) -> bool {
        self.table.find(h, |&k| states[k as usize] == *s).is_some()
    }

    fn insert(&mut self, states: &[State], h: u64) {
        let k = self.hashes.len() as u32;
        debug_assert_eq!(states.len(), k as usize + 1);
        self.hashes.push(h);
        let hashes = &self.hashes;
        self.table.insert_unique(h, k, |&j| hashes[j as usize]);
    }
}

pub(crate) fn search(m: &Machine<'_>) -> Search {
    let init = m.initial();
    let mut seen = Visited {
        table: HashTable::new(),
        hashes: Vec::new(),
    };
    let h0 = fx(&init);
    let mut st = Search {
        states: vec![init],
        parent: vec![None],
        violation: None,
        depth: 0,
        step_bound_hit: false,
        exhausted: false,
    };
    seen.insert(&st.states, h0);
    let mut frontier: Vec<u32> = vec![0];
    'layers: loop {
        let mut work = frontier;
        let mut next: Vec<(State, u64, u32, Action)> = Vec::new();
        while !work.is_empty() {
            let outs: Vec<_> = work
                .par_iter()
                .map(|&i| {
                    let out = m.successors(&st.states[i as usize]);
                    let hs: Vec<u64> = out.moves.iter().map(|mv| fx(&mv.state)).collect();
                    (out, hs)
                })
                .collect();
            let mut zero = Vec::new();
            for (&i, (out, hs)) in work.iter().zip(outs) {
                let within = |c: u8| c == 0 || st.depth < m.budget.steps;
                if let Some(&(a, v, _)) = out.violations.iter().find(|x| within(x.2)) {
                    st.violation = Some((i, a, v));
                    break 'layers;
                }
                for (mv, h) in out.moves.into_iter().zip(hs) {
                    if mv.cost == 0 {
                        if !seen.contains(&st.states, h, &mv.state) {
                            zero.push(st.states.len() as u32);
                            st.states.push(mv.state);
                            st.parent.push(Some((i, mv.action)));
                            seen.insert(&st.states, h);
                        }
                    } else if st.depth < m.budget.steps {
                        next.push((mv.state, h, i, mv.action));
                    } else if !seen.contains(&st.states, h, &mv.state) {
                        st.step_bound_hit = true;
                    }
                }
            }
            work = zero;
        }
        let mut layer = Vec::new();
        for (s, h, p, a) in next {
            if !seen.contains(&st.states, h, &s) {
                layer.push(st.states.len() as u32);
                st.states.push(s);
                st.parent.push(Some((p, a)));
                seen.insert(&st.states, h);
            }
        }
        if layer.is_empty() {
            break;
        }
        st.depth += 1;
        if st.states.len() > m.budget.max_states {
            st.exhausted = true;
            break;
        }
        frontier = layer;
    }
    st
}

impl Search {
    pub fn path(&self, mut i: u32) -> Vec<(u32, Action)> {
        let mut out = Vec::new();
        while let Some((p, a)) = self.parent[i as usize] {
            out.push((p, a));
            i = p;
        }
        out.reverse();
        out
    }

    #[cfg(test)]
    /// History along the path to state `i`, optionally followed by `last`.
    pub fn history(&self, m: &Machine<'_>, i: u32, last: Option<Action>) -> Vec<crate::automata::Event> {
        let mut steps = self.path(i);
        if let Some(a) = last {
            steps.push((i, a));
        }
        steps
            .into_iter()
            .filter_map(|(p, a)| m.event_of(&m.pre_state(&self.states[p as usize], a), a))
            .collect()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut hs: Vec<u64> = self.states.iter().map(|s| hash_of(&s.projection())).collect();
        hs.sort_unstable();
        hs.dedup();
        hash_of(&hs)
    }
}

fn witness(m: &Machine<'_>, st: &Search, last: Option<(u32, Action)>) -> Vec<WitnessStep> {
    let mut steps = match last {
        Some((i, _)) => st.path(i),
        None => vec![],
    };
    if let Some(l) = last {
        steps.push(l);
    }
    let mut procs: Vec<Option<usize>> = vec![None; m.budget.threads];
    let mut out = Vec::new();
    for (k, (p, a)) in steps.iter().enumerate() {
        let pre = m.pre_state(&st.states[*p as usize], *a);
        let post = steps.get(k + 1).map(|(q, _)| &st.states[*q as usize]);
        let (thread, command) = match *a {
            Action::Free(x) => ("env".to_string(), format!("free(a{x})")),
            Action::Edge { thread, edge, .. } => {
                procs[thread as usize] = Some(m.thread_proc(edge));
                (format!("t{thread}"), m.cfa.edges[edge as usize].com.to_string())
            }
        };
        let update = match post {
            Some(n) => m.describe_update(&pre, n, &procs),
            None => String::new(),
        };
        out.push(WitnessStep { thread, command, update });
    }
    out
}

/// Explore `prog` under automaton `o` within `budget`.
pub fn explore(
    prog: &Program,
    o: &SmrAutomaton,
    budget: &Budget,
    mode: Mode,
) -> Result<ExplorationReport, OracleError> {
    let m = Machine::new(prog, o, budget, mode)?;
    let st = if budget.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(budget.jobs)
            .build()
            .map_err(|e| OracleError::Budget(e.to_string()))?;
        pool.install(|| search(&m))
    } else {
        search(&m)
    };
    let (violation, wit) = match st.violation {
        Some((i, a, v)) => (Some(v), witness(&m, &st, Some((i, a)))),
        None => (None, vec![]),
    };
    Ok(ExplorationReport {
        verdict: if violation.is_some() { Verdict::Violation } else { Verdict::Clean },
        mode,
        violation,
        witness: wit,
        states: st.states.len(),
        steps: st.depth,
        step_bound_hit: st.step_bound_hit,
        budget_exhausted: st.exhausted,
        fingerprint: st.fingerprint(),
        budget: budget.clone(),
    })
}

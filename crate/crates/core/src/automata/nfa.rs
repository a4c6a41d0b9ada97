use std::collections::{HashSet, VecDeque};

use super::*;

/// An event whose parameters carry abstract values: `values[i]` is the set
/// (bitmask over automaton variables) of tracked variables equal to parameter i.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AbsSymbol {
    pub event: usize,
    pub values: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct AbstractNfa {
    pub n_states: usize,
    pub initial: LocSet,
    pub accepting: LocSet,
    pub symbols: Vec<AbsSymbol>,
    /// `delta[state][symbol]`
    pub delta: Vec<Vec<LocSet>>,
}

impl AbstractNfa {
    pub fn step(&self, cur: LocSet, sym: usize) -> LocSet {
        let mut out = LocSet::EMPTY;
        for q in cur.iter() {
            out = out.union(self.delta[q][sym]);
        }
        out
    }

    pub fn accepts(&self, word: &[usize]) -> bool {
        let mut cur = self.initial;
        for &s in word {
            cur = self.step(cur, s);
        }
        !cur.inter(self.accepting).is_empty()
    }

    pub fn with_initial(&self, initial: LocSet) -> AbstractNfa {
        AbstractNfa {
            initial,
            ..self.clone()
        }
    }

    /// Keep only the symbols satisfying `keep`.
    pub fn restrict(&self, keep: impl Fn(&AbsSymbol) -> bool) -> AbstractNfa {
        let idx: Vec<usize> = (0..self.symbols.len()).filter(|&i| keep(&self.symbols[i])).collect();
        AbstractNfa {
            n_states: self.n_states,
            initial: self.initial,
            accepting: self.accepting,
            symbols: idx.iter().map(|&i| self.symbols[i].clone()).collect(),
            delta: self
                .delta
                .iter()
                .map(|row| idx.iter().map(|&i| row[i]).collect())
                .collect(),
        }
    }
}

fn subsets_of(mask: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut s = mask;
    loop {
        out.push(s);
        if s == 0 {
            break;
        }
        s = (s - 1) & mask;
    }
    out.reverse();
    out
}

/// Abstract `o` into an NFA over abstract symbols. Only variables in
/// `tracked` (a bitmask over variable indices) contribute to abstract values;
/// the others are left unconstrained.
pub fn abstract_to_nfa(o: &SmrAutomaton, tracked: u32) -> AbstractNfa {
    let mut symbols = Vec::new();
    for (e, sig) in o.events.iter().enumerate() {
        let per_param: Vec<Vec<u32>> = sig
            .params
            .iter()
            .map(|s| {
                let mask = (0..o.vars.len())
                    .filter(|&j| tracked >> j & 1 == 1 && o.vars[j].sort == *s)
                    .fold(0u32, |m, j| m | 1 << j);
                subsets_of(mask)
            })
            .collect();
        let mut tuples: Vec<Vec<u32>> = vec![Vec::new()];
        for choices in &per_param {
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    choices.iter().map(move |&c| {
                        let mut t = t.clone();
                        t.push(c);
                        t
                    })
                })
                .collect();
        }
        for values in tuples {
            symbols.push(AbsSymbol { event: e, values });
        }
    }
    let n = o.n_locations();
    let mut delta = vec![vec![LocSet::EMPTY; symbols.len()]; n];
    for (si, sym) in symbols.iter().enumerate() {
        let sig = &o.events[sym.event];
        let mut member = Vec::new();
        for (i, &v) in sym.values.iter().enumerate() {
            for j in 0..o.vars.len() {
                if tracked >> j & 1 == 1 && o.vars[j].sort == sig.params[i] {
                    member.push(Lit::pv(i, j, v >> j & 1 == 1));
                }
            }
        }
        for t in o.transitions.iter().filter(|t| t.event == sym.event) {
            let mut lits = member.clone();
            lits.extend(t.guard.0.iter().map(Lit::atom));
            if satisfiable(&lits, &sig.params, &o.vars) {
                delta[t.src][si].insert(t.dst);
            }
        }
    }
    AbstractNfa {
        n_states: n,
        initial: LocSet::single(o.initial),
        accepting: o.accepting(),
        symbols,
        delta,
    }
}

/// Whether every word accepted by `a1` is accepted by `a2`, by exploring
/// `a1` against the subset construction of `a2`.
pub fn nfa_language_inclusion(a1: &AbstractNfa, a2: &AbstractNfa) -> Result<bool, AutomatonError> {
    if a1.symbols != a2.symbols {
        return Err(AutomatonError::Arity {
            func: "nfa".into(),
            msg: "alphabets differ".into(),
        });
    }
    let mut seen: HashSet<(usize, LocSet)> = HashSet::new();
    let mut queue = VecDeque::new();
    for q in a1.initial.iter() {
        if seen.insert((q, a2.initial)) {
            queue.push_back((q, a2.initial));
        }
    }
    while let Some((q, s)) = queue.pop_front() {
        if a1.accepting.contains(q) && s.inter(a2.accepting).is_empty() {
            return Ok(false);
        }
        for sym in 0..a1.symbols.len() {
            let s2 = a2.step(s, sym);
            for q2 in a1.delta[q][sym].iter() {
                if seen.insert((q2, s2)) {
                    queue.push_back((q2, s2));
                }
            }
        }
    }
    Ok(true)
}

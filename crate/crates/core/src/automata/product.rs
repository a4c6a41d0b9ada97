use std::collections::{HashMap, VecDeque};

use super::*;

/// Name of the merged accepting location of a product.
pub const SINK: &str = "(final)";

/// Synchronous product on shared events; an event known to only one factor
/// leaves the other factor in place. Variables are identified by name.
/// Only reachable pairs are kept and all accepting pairs collapse into one
/// sink location.
pub fn product(o1: &SmrAutomaton, o2: &SmrAutomaton) -> Result<SmrAutomaton, AutomatonError> {
    let mut vars = o1.vars.clone();
    let mut vmap2 = Vec::new();
    for v in &o2.vars {
        match vars.iter().position(|x| x.name == v.name) {
            Some(i) if vars[i].sort == v.sort => vmap2.push(i),
            Some(_) => {
                return Err(AutomatonError::Arity {
                    func: v.name.clone(),
                    msg: "variable declared with two sorts".into(),
                })
            }
            None => {
                vmap2.push(vars.len());
                vars.push(v.clone());
            }
        }
    }
    let zt = o1.zt;
    let za = o1.za;
    if vmap2[o2.zt] != zt || vmap2[o2.za] != za {
        return Err(AutomatonError::Arity {
            func: "vars".into(),
            msg: "factors disagree on the tracked thread/address variables".into(),
        });
    }

    let mut events = o1.events.clone();
    let mut emap2 = Vec::new();
    for e in &o2.events {
        match events.iter().position(|x| x.kind == e.kind && x.func == e.func) {
            Some(i) => {
                if events[i].params != e.params {
                    return Err(AutomatonError::Arity {
                        func: e.func.clone(),
                        msg: "factors declare different parameter lists".into(),
                    });
                }
                emap2.push(i);
            }
            None => {
                emap2.push(events.len());
                events.push(e.clone());
            }
        }
    }
    // inverse: product event -> factor event
    let in1: Vec<Option<usize>> = (0..events.len())
        .map(|e| (e < o1.events.len()).then_some(e))
        .collect();
    let in2: Vec<Option<usize>> = (0..events.len())
        .map(|e| emap2.iter().position(|&x| x == e))
        .collect();

    let remap2 = |g: &Guard| Guard(g.0.iter().map(|a| Atom { var: vmap2[a.var], ..*a }).collect());

    // moves of one factor on product event e: (guard, target)
    let moves = |o: &SmrAutomaton, fe: Option<usize>, l: usize, two: bool| -> Vec<(Guard, usize)> {
        match fe {
            None => vec![(Guard::default(), l)],
            Some(e) => o
                .transitions_from(l, e)
                .map(|t| (if two { remap2(&t.guard) } else { t.guard.clone() }, t.dst))
                .collect(),
        }
    };

    let acc = |a: usize, b: usize| o1.locations[a].accepting || o2.locations[b].accepting;
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut sink_members: Vec<(usize, usize)> = Vec::new();
    let mut raw: Vec<(usize, usize, Guard, Option<(usize, usize)>)> = Vec::new();
    let mut queue = VecDeque::new();
    let start = (o1.initial, o2.initial);
    if acc(start.0, start.1) {
        sink_members.push(start);
    } else {
        index.insert(start, 0);
        pairs.push(start);
        queue.push_back(start);
    }
    while let Some((a, b)) = queue.pop_front() {
        let src = index[&(a, b)];
        for e in 0..events.len() {
            let m1 = moves(o1, in1[e], a, false);
            let m2 = moves(o2, in2[e], b, true);
            for (g1, d1) in &m1 {
                for (g2, d2) in &m2 {
                    let mut atoms = g1.0.clone();
                    for x in &g2.0 {
                        if !atoms.contains(x) {
                            atoms.push(*x);
                        }
                    }
                    let lits: Vec<Lit> = atoms.iter().map(Lit::atom).collect();
                    if !satisfiable(&lits, &events[e].params, &vars) {
                        continue;
                    }
                    let dst = (*d1, *d2);
                    if acc(dst.0, dst.1) {
                        if !sink_members.contains(&dst) {
                            sink_members.push(dst);
                        }
                        raw.push((src, e, Guard(atoms), None));
                    } else {
                        if !index.contains_key(&dst) {
                            index.insert(dst, pairs.len());
                            pairs.push(dst);
                            queue.push_back(dst);
                        }
                        raw.push((src, e, Guard(atoms), Some(dst)));
                    }
                }
            }
        }
    }

    let marked1 = o1.has_active_marker;
    let marked2 = o2.has_active_marker;
    let active = |a: usize, b: usize| match (marked1, marked2) {
        (true, true) => o1.locations[a].active && o2.locations[b].active,
        (true, false) => o1.locations[a].active,
        (false, true) => o2.locations[b].active,
        (false, false) => false,
    };
    let mut locations: Vec<Location> = pairs
        .iter()
        .map(|&(a, b)| Location {
            name: format!("({},{})", o1.locations[a].name, o2.locations[b].name),
            accepting: false,
            active: active(a, b),
        })
        .collect();
    let sink = locations.len();
    if !sink_members.is_empty() {
        locations.push(Location {
            name: SINK.to_string(),
            accepting: true,
            active: sink_members.iter().any(|&(a, b)| active(a, b)),
        });
    }
    if locations.len() > MAX_LOCATIONS {
        return Err(AutomatonError::TooLarge);
    }

    let mut transitions: Vec<Transition> = raw
        .into_iter()
        .map(|(src, event, guard, dst)| {
            let dst = dst.map(|d| index[&d]).unwrap_or(sink);
            Transition {
                src,
                event,
                implicit: src == dst,
                guard,
                dst,
            }
        })
        .collect();
    if !sink_members.is_empty() {
        for e in 0..events.len() {
            transitions.push(Transition {
                src: sink,
                event: e,
                guard: Guard::default(),
                dst: sink,
                implicit: true,
            });
        }
    }

    let mut calls = o1.calls.clone();
    for c in &o2.calls {
        match calls.iter_mut().find(|x| x.func == c.func) {
            Some(x) => {
                for p in &c.positions {
                    if !x.positions.contains(p) {
                        x.positions.push(*p);
                    }
                }
                x.positions.sort();
            }
            None => calls.push(c.clone()),
        }
    }

    Ok(SmrAutomaton {
        name: format!("{}*{}", o1.name, o2.name),
        elision: o1.elision && o2.elision,
        vars,
        zt,
        za,
        events,
        locations,
        initial: if index.is_empty() { sink } else { 0 },
        transitions,
        calls,
        has_active_marker: false,
        out: Vec::new(),
        interference: Vec::new(),
    }
    .finish())
}

//! Control-flow automata for procedure bodies, with `skip` edges removed.

use std::collections::{BTreeMap, VecDeque};

use crate::lang::{Command, Stmt};

#[derive(Debug, Clone)]
pub(crate) struct Edge {
    pub proc: usize,
    pub com: Command,
    /// Canonical target node, `None` when the thread is done.
    pub to: Option<u16>,
    /// The command sits strictly inside an atomic block.
    pub in_atomic: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Cfa {
    pub edges: Vec<Edge>,
    /// Outgoing edges per canonical node.
    pub actions: Vec<Vec<u32>>,
    pub can_finish: Vec<bool>,
    /// Canonical entry node per procedure.
    pub entry: Vec<Option<u16>>,
}

struct Raw {
    n: usize,
    eps: Vec<(usize, usize)>,
    real: Vec<(usize, Command, usize)>,
    inside: Vec<bool>,
    depth: bool,
}

impl Raw {
    fn node(&mut self) -> usize {
        self.n += 1;
        self.n - 1
    }

    fn compile(&mut self, s: &Stmt, from: usize, to: usize) {
        match s {
            Stmt::Com(Command::Skip) => self.eps.push((from, to)),
            Stmt::Com(c) => {
                if *c == Command::EndAtomic {
                    self.depth = false;
                }
                self.inside.push(self.depth);
                if *c == Command::BeginAtomic {
                    self.depth = true;
                }
                self.real.push((from, c.clone(), to))
            }
            Stmt::Seq(a, b) => {
                let m = self.node();
                self.compile(a, from, m);
                self.compile(b, m, to);
            }
            Stmt::Choice(a, b) => {
                self.compile(a, from, to);
                self.compile(b, from, to);
            }
            Stmt::Loop(a) => {
                let h = self.node();
                self.eps.push((from, h));
                self.compile(a, h, h);
                self.eps.push((h, to));
            }
        }
    }
}

impl Cfa {
    pub fn build(bodies: &[&Stmt]) -> Cfa {
        let mut raw = Raw {
            n: 0,
            eps: Vec::new(),
            real: Vec::new(),
            inside: Vec::new(),
            depth: false,
        };
        let mut ends = Vec::new();
        let mut owner = Vec::new();
        for body in bodies {
            let (a, b) = (raw.node(), raw.node());
            let first = raw.real.len();
            raw.compile(body, a, b);
            owner.push((first, raw.real.len()));
            ends.push((a, b));
        }
        let mut eps_out = vec![Vec::new(); raw.n];
        for &(a, b) in &raw.eps {
            eps_out[a].push(b);
        }
        let mut real_out = vec![Vec::new(); raw.n];
        for (i, (a, _, _)) in raw.real.iter().enumerate() {
            real_out[*a].push(i);
        }
        let exits: Vec<usize> = ends.iter().map(|e| e.1).collect();
        // closure signature of each raw node: (sorted real edges, finishes)
        let sig = |n: usize| -> (Vec<usize>, bool) {
            let mut seen = vec![false; raw.n];
            let mut q = VecDeque::from([n]);
            seen[n] = true;
            let mut acts = Vec::new();
            let mut fin = false;
            while let Some(x) = q.pop_front() {
                fin |= exits.contains(&x);
                acts.extend(real_out[x].iter().copied());
                for &y in &eps_out[x] {
                    if !seen[y] {
                        seen[y] = true;
                        q.push_back(y);
                    }
                }
            }
            acts.sort_unstable();
            acts.dedup();
            (acts, fin)
        };
        let sigs: Vec<(Vec<usize>, bool)> = (0..raw.n).map(sig).collect();
        let mut canon: BTreeMap<&(Vec<usize>, bool), u16> = BTreeMap::new();
        let mut ids = vec![None; raw.n];
        let mut cfa = Cfa::default();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (n, s) in sigs.iter().enumerate() {
            if s.0.is_empty() {
                continue;
            }
            let next = canon.len() as u16;
            let id = *canon.entry(s).or_insert(next);
            if id == next {
                members.push(s.0.clone());
                cfa.can_finish.push(s.1);
            }
            ids[n] = Some(id);
        }
        let proc_of = |e: usize| owner.iter().position(|&(a, b)| a <= e && e < b).unwrap();
        for (i, (_, c, to)) in raw.real.iter().enumerate() {
            cfa.edges.push(Edge {
                proc: proc_of(i),
                com: c.clone(),
                to: ids[*to],
                in_atomic: raw.inside[i],
            });
        }
        cfa.actions = members
            .into_iter()
            .map(|m| m.into_iter().map(|e| e as u32).collect())
            .collect();
        cfa.entry = ends.iter().map(|e| ids[e.0]).collect();
        cfa
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn cfa(body: &str) -> Cfa {
        let p = parse_program(&format!("shared A; proc t {{ local p, q; {body} }}")).unwrap();
        Cfa::build(&[&p.procs[0].body])
    }

    #[test]
    fn straight_line() {
        let c = cfa("p = A; skip; q = p;");
        assert_eq!(c.edges.len(), 2);
        let e0 = c.entry[0].unwrap() as usize;
        assert_eq!(c.actions[e0].len(), 1);
        assert!(!c.can_finish[e0]);
        let last = c.edges[1].to;
        assert_eq!(last, None);
    }

    #[test]
    fn atomic_nesting_is_recorded() {
        let c = cfa("p = A; atomic { q = A; p = q; } q = p;");
        let inside: Vec<bool> = c.edges.iter().map(|e| e.in_atomic).collect();
        assert_eq!(inside, [false, false, true, true, false, false]);
    }

    #[test]
    fn loops_and_choice_share_nodes() {
        let c = cfa("loop { choose { p = A; } or { q = A; } }");
        let e0 = c.entry[0].unwrap() as usize;
        assert_eq!(c.actions[e0].len(), 2);
        assert!(c.can_finish[e0]);
        // both edges lead back to the loop head
        assert!(c.edges.iter().all(|e| e.to == Some(e0 as u16)));
    }

    #[test]
    fn empty_body_has_no_entry() {
        let c = cfa("skip;");
        assert_eq!(c.entry[0], None);
    }
}

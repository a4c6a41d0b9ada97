use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::lang::Command;

fn base() -> SmrAutomaton {
    parse_automaton(BASE_SMR).unwrap()
}

fn base_ebr() -> SmrAutomaton {
    load_builtin("ebr", true).unwrap()
}

fn names(o: &SmrAutomaton, s: LocSet) -> Vec<String> {
    let mut v = o.locset_names(s);
    v.sort();
    v
}

fn set(o: &SmrAutomaton, ns: &[&str]) -> LocSet {
    o.locset_of(ns).unwrap_or_else(|| panic!("unknown location in {ns:?}"))
}

#[test]
fn base_shape() {
    let o = base();
    assert_eq!(o.n_locations(), 3);
    assert_eq!(o.accepting().len(), 1);
    assert_eq!(o.accepting().inter(o.all_locations()).len(), 1);
    assert_eq!(names(&o, o.active_locations()), vec!["Init"]);
    // free, retire, exit retire
    assert_eq!(o.events.len(), 3);
}

#[test]
fn base_histories() {
    let o = base();
    let phi = [0, 7];
    assert_eq!(o.run_history(&phi, &[]), LocSet::single(o.initial));
    let r = o.run_history(&phi, &[Event::enter("retire", 1, vec![7])]);
    assert_eq!(names(&o, r), vec!["Retired"]);
    let r = o.run_history(&phi, &[Event::free(7)]);
    assert_eq!(names(&o, r), vec!["Final"]);
    assert!(!o.allows(&phi, &[Event::free(7)]));
    let h = [Event::enter("retire", 1, vec![7]), Event::free(7), Event::free(7)];
    assert!(!o.allows(&phi, &h));
    // other addresses are irrelevant
    assert!(o.allows(&phi, &[Event::free(3)]));
    // events outside the alphabet change nothing
    assert!(o.allows(&phi, &[Event::enter("leaveQ", 0, vec![])]));
}

#[test]
fn base_ebr_product_locations() {
    let o = base_ebr();
    assert_eq!(o.n_locations(), 6);
    assert_eq!(
        names(&o, o.all_locations()),
        vec![
            "(Init,Init)",
            "(Init,Protected)",
            "(Retired,Init)",
            "(Retired,Protected)",
            "(Retired,Retired)",
            SINK
        ]
    );
    assert_eq!(
        names(&o, o.active_locations()),
        vec!["(Init,Init)", "(Init,Protected)", SINK]
    );
}

#[test]
fn safe_locations_examples() {
    let o = base_ebr();
    assert_eq!(
        o.safe_locations(),
        set(&o, &["(Init,Protected)", "(Retired,Retired)", SINK])
    );
    let b = base();
    assert_eq!(names(&b, b.safe_locations()), vec!["Final"]);
    let nofree = parse_automaton(
        "automaton n { vars zt: thread, za: address; events enter f(t); locations A init, B; A -> B on enter f(t) when t == zt; }",
    )
    .unwrap();
    assert_eq!(nofree.safe_locations(), nofree.all_locations());
}

#[test]
fn post_image_examples() {
    let b = base();
    let com = Command::Enter("retire".into(), vec!["p".into()], vec![]);
    let init = set(&b, &["Init"]);
    assert_eq!(
        b.post_image(VarRole::Pointer("p"), &com, init).unwrap(),
        set(&b, &["Retired"])
    );
    // a different pointer is not affected
    assert_eq!(
        b.post_image(VarRole::Pointer("q"), &com, init).unwrap(),
        set(&b, &["Init", "Retired"])
    );
    assert_eq!(b.post_image(VarRole::Pointer("p"), &Command::Skip, init).unwrap(), init);

    let o = base_ebr();
    let leave = Command::Exit("leaveQ".into());
    let post = o.post_image(VarRole::Pointer("x"), &leave, o.all_locations()).unwrap();
    assert_eq!(
        post,
        o.all_locations().minus(set(&o, &["(Init,Init)", "(Retired,Init)"]))
    );
    assert!(matches!(
        o.post_image(VarRole::Pointer("x"), &Command::Exit("nope".into()), post),
        Err(AutomatonError::UnknownEvent(_))
    ));
    let bad = Command::Enter("retire".into(), vec![], vec![]);
    assert!(matches!(
        o.post_image(VarRole::Pointer("x"), &bad, post),
        Err(AutomatonError::Arity { .. })
    ));
}

#[test]
fn angel_post_drops_address_binding() {
    let b = base();
    let com = Command::Enter("retire".into(), vec!["r".into()], vec![]);
    let init = set(&b, &["Init"]);
    assert_eq!(
        b.post_image(VarRole::Angel("r"), &com, init).unwrap(),
        set(&b, &["Init", "Retired"])
    );
}

#[test]
fn closure_examples() {
    let o = base_ebr();
    assert_eq!(o.interference_closure(LocSet::EMPTY), LocSet::EMPTY);
    assert_eq!(o.interference_closure(o.all_locations()), o.all_locations());
    let c = o.interference_closure(set(&o, &["(Init,Protected)"]));
    assert!(c.contains(o.location_index("(Retired,Retired)").unwrap()));
    assert!(o.is_closed(o.safe_locations()));
    assert_eq!(o.largest_closed_subset(LocSet::EMPTY), LocSet::EMPTY);
}

#[test]
fn hp2_shape() {
    let o = parse_automaton(HP2_SMR).unwrap();
    assert_eq!(o.n_locations(), 20);
    assert_eq!(o.n_locations() - o.accepting().len(), 19);
    let p = load_builtin("hp2", true).unwrap();
    assert_eq!(p.accepting().len(), 1);
    // every non-accepting hp2 location combines with base-init at least
    assert!(p.n_locations() > 19);
}

#[test]
fn trivial_factor_is_identity() {
    let triv = parse_automaton("automaton t { vars zt: thread, za: address; locations Only init; }").unwrap();
    let b = base();
    let p = product(&b, &triv).unwrap();
    assert_eq!(p.n_locations(), b.n_locations());
    assert_eq!(p.safe_locations().len(), b.safe_locations().len());
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..200 {
        let h = random_history(&mut rng, &["retire"], 5);
        for a in 0..3 {
            assert_eq!(b.allows(&[0, a], &h), p.allows(&[0, a], &h));
        }
    }
}

fn random_history(rng: &mut StdRng, enters: &[&str], len: usize) -> Vec<Event> {
    let n = rng.gen_range(0..=len);
    (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => Event::free(rng.gen_range(0..3)),
            1 => {
                let f = enters[rng.gen_range(0..enters.len())];
                let arg = if f == "retire" || f.starts_with("protect") {
                    vec![rng.gen_range(0..3)]
                } else {
                    vec![]
                };
                Event::enter(f, rng.gen_range(0..3), arg)
            }
            _ => {
                let f = enters[rng.gen_range(0..enters.len())];
                Event::exit(f, rng.gen_range(0..3))
            }
        })
        .collect()
}

#[test]
fn product_allows_the_intersection() {
    let mut rng = StdRng::seed_from_u64(11);
    let b = base();
    for other in ["ebr", "hp2"] {
        let o = parse_automaton(builtin_source(other).unwrap()).unwrap();
        let p = product(&b, &o).unwrap();
        let enters: Vec<&str> = o
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Enter)
            .map(|e| e.func.as_str())
            .collect();
        for _ in 0..1000 {
            let h = random_history(&mut rng, &enters, 8);
            for t in 0..3 {
                for a in 0..3 {
                    let phi = [t, a];
                    assert_eq!(
                        p.allows(&phi, &h),
                        b.allows(&phi, &h) && o.allows(&phi, &h),
                        "{other} {h:?} {phi:?}"
                    );
                }
            }
        }
    }
}

#[test]
fn parse_errors() {
    let two_params = "automaton x { vars zt: thread, za: address; events enter f(t, a); locations A init; A -> A on enter f(t, a) when t == a; }";
    assert!(matches!(parse_automaton(two_params), Err(AutomatonError::Guard { .. })));
    let two_vars = "automaton x { vars zt: thread, za: address; events enter f(t, a); locations A init; A -> A on enter f(t, a) when zt == za; }";
    assert!(matches!(parse_automaton(two_vars), Err(AutomatonError::Guard { .. })));
    let bad_acc = "automaton x { vars zt: thread, za: address; events enter f(t); locations A init, F accepting; A -> F on enter f(t) when t == zt; }";
    assert!(matches!(parse_automaton(bad_acc), Err(AutomatonError::Acceptance(_))));
    let leave_acc = "automaton x { vars zt: thread, za: address; locations A init, F accepting; F -> A on free(a) when a == za; }";
    assert!(matches!(parse_automaton(leave_acc), Err(AutomatonError::Acceptance(_))));
    let syntax = "automaton x { vars zt thread; }";
    match parse_automaton(syntax) {
        Err(AutomatonError::Syntax { line: 1, col, .. }) => assert_eq!(col, 23),
        other => panic!("{other:?}"),
    }
}

#[test]
fn implicit_loops_complement_guards() {
    let b = base();
    let free = b.free_event().unwrap();
    let init = b.location_index("Init").unwrap();
    let loops: Vec<&Transition> = b.transitions_from(init, free).filter(|t| t.implicit).collect();
    assert_eq!(loops.len(), 1);
    assert_eq!(loops[0].guard.0, vec![Atom { param: 0, var: b.za, eq: false }]);
    // every concrete event has a successor
    for l in 0..b.n_locations() {
        for a in 0..3 {
            assert!(!b.step_concrete(LocSet::single(l), &[0, 0], &Event::free(a)).is_empty());
        }
    }
}

#[test]
fn dsl_round_trip() {
    for src in [BASE_SMR, EBR_SMR, HP2_SMR] {
        let o = parse_automaton(src).unwrap();
        let again = parse_automaton(&o.to_dsl()).unwrap();
        assert_eq!(o.n_locations(), again.n_locations());
        assert_eq!(o.transitions.len(), again.transitions.len());
        assert_eq!(o.safe_locations(), again.safe_locations());
    }
}

#[test]
fn nfa_base_edges() {
    let b = base();
    let nfa = abstract_to_nfa(&b, 1 << b.za | 1 << b.zt);
    let retire = b.event_index(EventKind::Enter, "retire").unwrap();
    let (i, r) = (b.location_index("Init").unwrap(), b.location_index("Retired").unwrap());
    let sym = |vals: Vec<u32>| nfa.symbols.iter().position(|s| s.event == retire && s.values == vals).unwrap();
    assert!(nfa.delta[i][sym(vec![0, 1 << b.za])].contains(r));
    assert!(!nfa.delta[i][sym(vec![0, 0])].contains(r));
    assert!(nfa.delta[i][sym(vec![0, 0])].contains(i));
    let t = parse_automaton("automaton t { vars zt: thread, za: address; events enter f(t, a); locations A init, B; A -> B on enter f(t, a) when true; }").unwrap();
    let tn = abstract_to_nfa(&t, 0b11);
    let f = t.event_index(EventKind::Enter, "f").unwrap();
    for (si, s) in tn.symbols.iter().enumerate() {
        if s.event == f {
            assert!(tn.delta[0][si].contains(1));
        }
    }
}

#[test]
fn nfa_inclusion_basics() {
    let b = abstract_to_nfa(&base(), 0b11);
    assert!(nfa_language_inclusion(&b, &b).unwrap());
    let empty = b.with_initial(LocSet::EMPTY);
    assert!(nfa_language_inclusion(&empty, &b).unwrap());
    assert!(!nfa_language_inclusion(&b, &empty).unwrap());
    let e = abstract_to_nfa(&base_ebr(), 0b11);
    assert!(nfa_language_inclusion(&b, &e).is_err());
}

/// Random automaton over `enter f(t, a)`, `enter g(t)` and `free(a)`.
pub(crate) fn random_automaton_src(rng: &mut StdRng, n: usize) -> String {
    let mut s = String::from("automaton r { vars zt: thread, za: address; events enter f(t, a), enter g(t); locations ");
    let mut locs: Vec<String> = (0..n).map(|i| format!("L{i}")).collect();
    locs[0].push_str(" init");
    let acc = rng.gen_bool(0.5);
    if acc {
        locs.push("F accepting".into());
    }
    s.push_str(&locs.join(", "));
    s.push(';');
    let atom = |rng: &mut StdRng, p: &str, v: &str| format!("{p} {} {v}", if rng.gen_bool(0.5) { "==" } else { "!=" });
    for _ in 0..rng.gen_range(0..3 * n) {
        let src = rng.gen_range(0..n);
        let dst = rng.gen_range(0..n);
        let text = match rng.gen_range(0..5) {
            0 => {
                let mut g = Vec::new();
                if rng.gen_bool(0.6) {
                    g.push(atom(rng, "t", "zt"));
                }
                if rng.gen_bool(0.6) {
                    g.push(atom(rng, "a", "za"));
                }
                let when = if g.is_empty() { "when true".into() } else { format!("when {}", g.join(" && ")) };
                format!("L{src} -> L{dst} on enter f(t, a) {when};")
            }
            1 => format!("L{src} -> L{dst} on enter g(t) when {};", atom(rng, "t", "zt")),
            2 => format!("L{src} -> L{dst} on exit f(t) when {};", atom(rng, "t", "zt")),
            3 if acc => format!("L{src} -> F on free(a) when {};", atom(rng, "a", "za")),
            _ => format!("L{src} -> L{dst} on free(a) when {};", atom(rng, "a", "za")),
        };
        s.push_str(&text);
    }
    s.push('}');
    s
}

/// Concrete parameter vectors over a three-value domain.
fn concrete_params(sig: &EventSig) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![vec![]];
    for _ in &sig.params {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..3).map(move |x| {
                    let mut v = v.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out
}

/// Interference successors by concrete enumeration with zt = za = 0.
fn brute_interference(o: &SmrAutomaton, l: usize) -> LocSet {
    let phi = vec![0; o.vars.len()];
    let mut out = LocSet::EMPTY;
    for (e, sig) in o.events.iter().enumerate() {
        if !sig.has_thread() {
            continue;
        }
        for ps in concrete_params(sig) {
            if ps[0] == 0 {
                continue;
            }
            out = out.union(o.step_event(LocSet::single(l), &phi, e, &ps));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn closure_laws(seed in any::<u64>(), n in 1usize..5, mask in any::<u8>(), mask2 in any::<u8>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let o = parse_automaton(&random_automaton_src(&mut rng, n)).unwrap();
        let all = o.all_locations();
        let l = LocSet(mask as u128).inter(all);
        let m = LocSet(mask2 as u128).inter(all);
        let c = o.interference_closure(l);
        prop_assert!(l.is_subset(c));
        prop_assert_eq!(o.interference_closure(c), c);
        if l.is_subset(m) {
            prop_assert!(c.is_subset(o.interference_closure(m)));
        }
        prop_assert!(o.is_closed(c));
        let cm = o.interference_closure(m);
        prop_assert!(o.is_closed(c.union(cm)));
        for q in 0..o.n_locations() {
            prop_assert_eq!(o.interference_successors(q), brute_interference(&o, q));
        }
    }

    #[test]
    fn lcs_is_union_of_closed_subsets(seed in any::<u64>(), n in 1usize..6, mask in any::<u8>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let o = parse_automaton(&random_automaton_src(&mut rng, n)).unwrap();
        let nl = o.n_locations();
        let l = LocSet(mask as u128).inter(o.all_locations());
        let closed = |s: LocSet| s.iter().all(|q| brute_interference(&o, q).is_subset(s));
        let mut union = LocSet::EMPTY;
        for sub in 0u128..(1 << nl) {
            let s = LocSet(sub);
            if s.is_subset(l) && closed(s) {
                union = union.union(s);
            }
        }
        prop_assert_eq!(o.largest_closed_subset(l), union);
        let safe = o.safe_locations();
        prop_assert!(o.is_closed(safe));
        // no location of SafeLoc can free za into a non-accepting location
        match o.free_event() {
            None => prop_assert_eq!(safe, o.all_locations()),
            Some(fe) => {
                let phi = vec![0; o.vars.len()];
                for q in safe.iter() {
                    let post = o.step_event(LocSet::single(q), &phi, fe, &[0]);
                    prop_assert!(post.is_subset(o.accepting()));
                }
            }
        }
    }

    #[test]
    fn nfa_step_fidelity(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = StdRng::seed_from_u64(seed);
        let o = parse_automaton(&random_automaton_src(&mut rng, n)).unwrap();
        let nfa = abstract_to_nfa(&o, 0b11);
        // zt = 0, za = 0
        let phi = [0, 0];
        for (e, sig) in o.events.iter().enumerate() {
            for ps in concrete_params(sig) {
                let abs: Vec<u32> = ps
                    .iter()
                    .zip(&sig.params)
                    .map(|(&v, s)| if v != 0 { 0 } else if *s == Sort::Thread { 1 << o.zt } else { 1 << o.za })
                    .collect();
                let si = nfa.symbols.iter().position(|s| s.event == e && s.values == abs).unwrap();
                for q in 0..o.n_locations() {
                    prop_assert_eq!(o.step_event(LocSet::single(q), &phi, e, &ps), nfa.delta[q][si]);
                }
            }
        }
    }

    #[test]
    fn nfa_inclusion_matches_sampling(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        let mut rng = StdRng::seed_from_u64(seed);
        let o1 = parse_automaton(&random_automaton_src(&mut rng, n)).unwrap();
        let o2 = parse_automaton(&random_automaton_src(&mut rng, m)).unwrap();
        let a1 = abstract_to_nfa(&o1, 0b11);
        let a2 = abstract_to_nfa(&o2, 0b11);
        if a1.symbols != a2.symbols {
            return Ok(());
        }
        let incl = nfa_language_inclusion(&a1, &a2).unwrap();
        let k = a1.symbols.len();
        let mut counter = false;
        for _ in 0..10_000 {
            let len = rng.gen_range(0..=6);
            let w: Vec<usize> = (0..len).map(|_| rng.gen_range(0..k)).collect();
            if a1.accepts(&w) && !a2.accepts(&w) {
                counter = true;
                break;
            }
        }
        // a sampled counterexample refutes inclusion
        if counter {
            prop_assert!(!incl);
        }
        // exhaustive check up to length 3
        let mut words: Vec<Vec<usize>> = vec![vec![]];
        let mut layer: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..3 {
            if words.len() * k > 20_000 {
                break;
            }
            layer = layer
                .iter()
                .flat_map(|w| (0..k).map(move |s| { let mut w2 = w.clone(); w2.push(s); w2 }))
                .collect();
            words.extend(layer.iter().cloned());
        }
        let short_counter = words.iter().any(|w| a1.accepts(w) && !a2.accepts(w));
        if short_counter {
            prop_assert!(!incl);
        }
    }
}

/// Two-slot hazard pointers, as a direct check on (zt, za) = (0, 1): a slot
/// guards za from the exit of its protection until it is overwritten, and
/// freeing is forbidden once za was retired while some slot guarded it.
#[derive(Clone, Copy, Default)]
struct HpRef {
    pending: [bool; 2],
    guard: [bool; 2],
    retired_guarded: [bool; 2],
    freed_bad: bool,
}

impl HpRef {
    fn step(mut self, ev: &Event) -> HpRef {
        let (func, t) = (ev.func.as_str(), ev.thread);
        let slot = match func {
            "protect0" => Some(0),
            "protect1" => Some(1),
            _ => None,
        };
        match (ev.kind, slot) {
            (EventKind::Enter, Some(k)) if t == Some(0) => {
                if ev.values[0] == 1 {
                    self.pending[k] = !self.guard[k];
                } else {
                    self.guard[k] = false;
                    self.retired_guarded[k] = false;
                }
            }
            (EventKind::Exit, Some(k)) if t == Some(0) && self.pending[k] => {
                self.pending[k] = false;
                self.guard[k] = true;
            }
            (EventKind::Enter, None) if func == "retire" && ev.values[0] == 1 => {
                for k in 0..2 {
                    self.retired_guarded[k] |= self.guard[k];
                }
            }
            (EventKind::Free, _) if ev.values[0] == 1 => {
                self.freed_bad |= self.retired_guarded[0] || self.retired_guarded[1];
            }
            _ => {}
        }
        self
    }
}

#[test]
fn hp2_matches_reference_on_short_histories() {
    let o = parse_automaton(HP2_SMR).unwrap();
    let mut alphabet = Vec::new();
    for f in ["protect0", "protect1", "retire"] {
        for t in 0..2 {
            for a in 1..=2 {
                alphabet.push(Event::enter(f, t, vec![a]));
            }
            alphabet.push(Event::exit(f, t));
        }
    }
    alphabet.push(Event::free(1));
    alphabet.push(Event::free(2));
    let phi = [0, 1];
    // per thread: the call it is inside, if any
    fn go(
        o: &SmrAutomaton,
        alphabet: &[Event],
        cur: LocSet,
        r: HpRef,
        open: [Option<String>; 2],
        depth: usize,
        h: &mut Vec<Event>,
        count: &mut usize,
    ) {
        *count += 1;
        let accepted = !cur.inter(o.accepting()).is_empty();
        assert_eq!(accepted, r.freed_bad, "{h:?}");
        if depth == 0 || accepted {
            return;
        }
        for ev in alphabet {
            let mut open = open.clone();
            if let Some(t) = ev.thread {
                let t = t as usize;
                match ev.kind {
                    EventKind::Enter if open[t].is_none() => open[t] = Some(ev.func.clone()),
                    EventKind::Exit if open[t].as_deref() == Some(ev.func.as_str()) => open[t] = None,
                    _ => continue,
                }
            }
            h.push(ev.clone());
            let next = o.step_concrete(cur, &[0, 1], ev);
            go(o, alphabet, next, r.step(ev), open, depth - 1, h, count);
            h.pop();
        }
    }
    let mut count = 0;
    let init = o.run_history(&phi, &[]);
    go(&o, &alphabet, init, HpRef::default(), [None, None], 7, &mut Vec::new(), &mut count);
    assert!(count > 100_000, "{count}");
}

//! End-to-end checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines show up in plain `cargo test` output.

use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use smrcheck::automata::{abstract_to_nfa, load_builtin, parse_automaton, LocSet, Sort, SmrAutomaton};
use smrcheck::corpus::{structure, MICRO, STRUCTURES};
use smrcheck::inference::{typecheck, TypeReport};
use smrcheck::instrument::instrument;
use smrcheck::lang::{parse_program, Program, Stmt};
use smrcheck::oracle::{explore, Budget, Mode};
use smrcheck::rules::SafeCallTable;
use smrcheck::types::TypeContext;

type Outcome = Result<String, String>;

fn check(p: &Program, o: &SmrAutomaton) -> TypeReport {
    let t = SafeCallTable::from_automaton(o);
    typecheck(p, &TypeContext::new(o.clone()), &t).expect("well-formed program")
}

fn gc(steps: usize) -> Budget {
    Budget {
        steps,
        ..Budget::default()
    }
}

fn corpus_types() -> Outcome {
    let mut slowest = Duration::ZERO;
    let mut bad = Vec::new();
    for e in STRUCTURES {
        let o = load_builtin(e.smr, true).unwrap();
        let p = e.program();
        let t = Instant::now();
        let r = check(&p, &o);
        let dt = t.elapsed();
        slowest = slowest.max(dt);
        if !r.ok() || dt >= Duration::from_secs(10) {
            bad.push(format!("{} ({:?}, ok={})", e.name, dt, r.ok()));
        }
    }
    if bad.is_empty() {
        Ok(format!("{} programs typecheck, slowest {:?}", STRUCTURES.len(), slowest))
    } else {
        Err(bad.join(", "))
    }
}

/// `s` with its `k`-th annotation (in pre-order) turned into `skip`.
fn drop_annotation(s: &Stmt, k: &mut isize) -> Stmt {
    match s {
        Stmt::Com(c) if c.is_annotation() => {
            *k -= 1;
            if *k == -1 {
                Stmt::skip()
            } else {
                s.clone()
            }
        }
        Stmt::Com(_) => s.clone(),
        Stmt::Seq(a, b) => {
            let a = drop_annotation(a, k);
            Stmt::seq(a, drop_annotation(b, k))
        }
        Stmt::Choice(a, b) => {
            let a = drop_annotation(a, k);
            Stmt::choice(a, drop_annotation(b, k))
        }
        Stmt::Loop(a) => Stmt::looped(drop_annotation(a, k)),
    }
}

fn negative_controls() -> Outcome {
    let mut flipped = 0;
    let mut malformed = 0;
    let mut bad = Vec::new();
    for name in ["msqueue_hp", "msqueue_ebr"] {
        let e = structure(name).unwrap();
        let o = load_builtin(e.smr, true).unwrap();
        let p = e.program();
        for (pi, proc) in p.procs.iter().enumerate() {
            let n = proc.body.commands().iter().filter(|c| c.is_annotation()).count();
            for k in 0..n {
                let mut q = p.clone();
                let mut i = k as isize;
                q.procs[pi].body = drop_annotation(&proc.body, &mut i);
                let removed = proc.body.commands().into_iter().filter(|c| c.is_annotation()).nth(k).unwrap().to_string();
                let t = SafeCallTable::from_automaton(&o);
                match typecheck(&q, &TypeContext::new(o.clone()), &t) {
                    Ok(r) => match r.failure() {
                        Some(f) if !f.diagnostic.rule.is_empty() && !f.diagnostic.var.is_empty() => flipped += 1,
                        _ => bad.push(format!("{name}/{}: `{removed}` still typechecks", proc.name)),
                    },
                    // the angel is then used before it is bound
                    Err(_) if removed.starts_with("@inv angel") => malformed += 1,
                    Err(err) => bad.push(format!("{name}/{}: `{removed}`: {err}", proc.name)),
                }
            }
        }
    }
    if bad.is_empty() {
        Ok(format!("{flipped} single deletions report rule and variable, {malformed} rejected as unbound angel"))
    } else {
        Err(bad.join("; "))
    }
}

fn instrumentation_agreement() -> Outcome {
    let mut bad = Vec::new();
    for e in MICRO {
        let o = load_builtin(e.smr, true).unwrap();
        let p = e.program();
        let inv = explore(&p, &o, &gc(24), Mode::Invariants).unwrap();
        let asr = explore(&instrument(&p), &o, &gc(24), Mode::Asserts).unwrap();
        let exact = |r: &smrcheck::oracle::ExplorationReport| r.violation.is_some() || !r.budget_exhausted;
        if !exact(&inv) || !exact(&asr) {
            bad.push(format!("{}: state budget exhausted", e.name));
        } else if inv.clean() != asr.clean() {
            bad.push(format!("{}: invariants {} vs instrumented {}", e.name, inv.clean(), asr.clean()));
        } else if Some(inv.clean()) != e.expect_holds() {
            bad.push(format!("{}: header disagrees", e.name));
        }
    }
    let holds = MICRO.iter().filter(|e| e.expect_holds() == Some(true)).count();
    if MICRO.len() < 30 {
        bad.push(format!("only {} micro-programs", MICRO.len()));
    }
    if bad.is_empty() {
        Ok(format!("{} micro-programs agree ({} hold, {} violated)", MICRO.len(), holds, MICRO.len() - holds))
    } else {
        Err(bad.join("; "))
    }
}

fn soundness() -> Outcome {
    let mut bad = Vec::new();
    let frees = Budget::default().with_frees();
    for e in STRUCTURES {
        let o = load_builtin(e.smr, true).unwrap();
        let p = e.program();
        if !check(&p, &o).ok() {
            continue;
        }
        let r = explore(&p, &o, &frees, Mode::Races).unwrap();
        if !r.clean() || r.budget_exhausted {
            bad.push(format!("{}: {}", e.name, r.render()));
        }
    }
    let mut racy = 0;
    for e in MICRO {
        let o = load_builtin(e.smr, true).unwrap();
        let p = e.program();
        let r = explore(&p, &o, &frees, Mode::Races).unwrap();
        if r.clean() == e.racy() {
            bad.push(format!("{}: oracle says clean={}", e.name, r.clean()));
        }
        if e.racy() {
            racy += 1;
            if check(&p, &o).ok() && e.expect_holds() != Some(false) {
                bad.push(format!("{}: racy, typechecks, annotations hold", e.name));
            }
        }
    }
    // unprotected traversals: rejected by the types, races found by the explorer
    let mutants = [
        ("treiber_hp", &["enter protect0(top);", "exit protect0;"][..]),
        ("msqueue_hp", &["enter protect0(head);", "exit protect0;"][..]),
        ("vy_cas_hp", &["enter protect1(curr);", "exit protect1;", "enter protect0(curr);", "exit protect0;"][..]),
    ];
    for (name, drop) in mutants {
        let e = structure(name).unwrap();
        let mut src = e.source.to_string();
        for d in drop {
            src = src.replace(d, "");
        }
        let p = parse_program(&src).unwrap();
        let o = load_builtin(e.smr, true).unwrap();
        if check(&p, &o).ok() {
            bad.push(format!("{name} without protection typechecks"));
        }
        if explore(&p, &o, &frees, Mode::Races).unwrap().clean() {
            bad.push(format!("{name} without protection shows no race"));
        }
    }
    if bad.is_empty() {
        Ok(format!(
            "{} typed structures race-free with frees; {racy} racy micros rejected; {} mutants race",
            STRUCTURES.len(),
            mutants.len()
        ))
    } else {
        Err(bad.join("; "))
    }
}

/// Random automaton over `enter f(t, a)`, `enter g(t)`, `exit f` and `free(a)`.
fn random_automaton(rng: &mut StdRng, n: usize, edges: usize) -> String {
    let mut s = String::from("automaton r { vars zt: thread, za: address; events enter f(t, a), enter g(t); locations ");
    let mut locs: Vec<String> = (0..n).map(|i| format!("L{i}")).collect();
    locs[0].push_str(" init");
    if n > 1 && rng.gen_bool(0.5) {
        locs[n - 1].push_str(" accepting");
    }
    s.push_str(&locs.join(", "));
    s.push(';');
    let acc = locs[n - 1].ends_with("accepting");
    let mut added = 0;
    while added < edges {
        let (src, dst, t) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..TEMPLATES));
        if acc && !allowed(n, src, dst, t) {
            continue;
        }
        s.push_str(&format!("L{src} -> L{dst} on {};", template(t)));
        added += 1;
    }
    s.push('}');
    s
}

const TEMPLATES: usize = 15;

/// Only frees enter the accepting last location, and nothing leaves it.
fn allowed(n: usize, src: usize, dst: usize, t: usize) -> bool {
    src != n - 1 && (dst != n - 1 || t >= 13)
}

fn template(i: usize) -> String {
    let rel = |k: usize| if k == 0 { "==" } else { "!=" };
    match i {
        0..=8 => {
            let mut g = Vec::new();
            if i % 3 != 2 {
                g.push(format!("t {} zt", rel(i % 3)));
            }
            if i / 3 != 2 {
                g.push(format!("a {} za", rel(i / 3)));
            }
            let when = if g.is_empty() { "true".into() } else { g.join(" && ") };
            format!("enter f(t, a) when {when}")
        }
        9 | 10 => format!("enter g(t) when t {} zt", rel(i - 9)),
        11 | 12 => format!("exit f(t) when t {} zt", rel(i - 11)),
        _ => format!("free(a) when a {} za", rel(i - 13)),
    }
}

/// Every automaton with `n` locations and the given transition templates.
fn family(n: usize, k: usize) -> Vec<String> {
    let slots = n * n * TEMPLATES;
    let mut out = Vec::new();
    let mut pick = vec![0usize; k];
    loop {
        for acc in [false, true] {
            if acc && n == 1 {
                continue;
            }
            let mut locs: Vec<String> = (0..n).map(|i| format!("L{i}")).collect();
            locs[0].push_str(" init");
            if acc {
                locs[n - 1].push_str(" accepting");
            }
            let mut s = format!(
                "automaton r {{ vars zt: thread, za: address; events enter f(t, a), enter g(t); locations {};",
                locs.join(", ")
            );
            let edges: Vec<(usize, usize, usize)> = pick
                .iter()
                .map(|&x| (x / (n * TEMPLATES), (x / TEMPLATES) % n, x % TEMPLATES))
                .collect();
            if acc && !edges.iter().all(|&(a, b, t)| allowed(n, a, b, t)) {
                continue;
            }
            for (src, dst, t) in edges {
                s.push_str(&format!("L{src} -> L{dst} on {};", template(t)));
            }
            s.push('}');
            out.push(s);
        }
        // next non-decreasing tuple
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if pick[i] + 1 < slots {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[i];
                }
                break;
            }
        }
    }
}

/// Concrete parameter vectors over a three-value domain.
fn concrete_params(sorts: &[Sort]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![vec![]];
    for _ in sorts {
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

/// Other-thread successors of `l` with zt = za = 0, by enumeration.
fn interference(o: &SmrAutomaton, l: usize) -> LocSet {
    let phi = vec![0; o.vars.len()];
    let mut out = LocSet::EMPTY;
    for (e, sig) in o.events.iter().enumerate() {
        if !sig.has_thread() {
            continue;
        }
        for ps in concrete_params(&sig.params) {
            if ps[0] != 0 {
                out = out.union(o.step_event(LocSet::single(l), &phi, e, &ps));
            }
        }
    }
    out
}

fn lattice_laws() -> Outcome {
    let o = load_builtin("ebr", true).unwrap();
    let c = TypeContext::new(o);
    let all = c.enumerate();
    for a in &all {
        if c.join(a, a) != *a || c.meet(a, a) != *a {
            return Err("idempotence".into());
        }
        for b in &all {
            let (j, m) = (c.join(a, b), c.meet(a, b));
            if j != c.join(b, a) || m != c.meet(b, a) {
                return Err("commutativity".into());
            }
            if c.join(a, &m) != *a || c.meet(a, &j) != *a {
                return Err("absorption".into());
            }
            if !(c.leq(a, &j) && c.leq(b, &j) && c.leq(&m, a) && c.leq(&m, b)) {
                return Err("bounds".into());
            }
            for u in &all {
                if c.leq(a, u) && c.leq(b, u) && !c.leq(&j, u) {
                    return Err("join is not least".into());
                }
                if c.leq(u, a) && c.leq(u, b) && !c.leq(u, &m) {
                    return Err("meet is not greatest".into());
                }
                if c.join(&c.join(a, b), u) != c.join(a, &c.join(b, u)) || c.meet(&c.meet(a, b), u) != c.meet(a, &c.meet(b, u)) {
                    return Err("associativity".into());
                }
            }
        }
    }
    let mut rng = StdRng::seed_from_u64(5);
    let mut automata = 0;
    for n in 1..=6 {
        for _ in 0..60 {
            let edges = rng.gen_range(0..=3 * n);
            let o = parse_automaton(&random_automaton(&mut rng, n, edges)).unwrap();
            let nl = o.n_locations();
            let succ: Vec<LocSet> = (0..nl).map(|q| interference(&o, q)).collect();
            let closed = |s: LocSet| s.iter().all(|q| succ[q].is_subset(s));
            for l in 0u128..1 << nl {
                let l = LocSet(l);
                let brute = (0u128..1 << nl)
                    .map(LocSet)
                    .filter(|s| s.is_subset(l) && closed(*s))
                    .fold(LocSet::EMPTY, LocSet::union);
                if o.largest_closed_subset(l) != brute {
                    return Err(format!("largest closed subset differs on {n} locations"));
                }
            }
            automata += 1;
        }
    }
    Ok(format!(
        "laws over all {} canonical types of base x ebr; closed subsets match on {automata} automata",
        all.len()
    ))
}

fn step_fidelity(o: &SmrAutomaton) -> bool {
    let nfa = abstract_to_nfa(o, 0b11);
    let phi = [0, 0];
    for (e, sig) in o.events.iter().enumerate() {
        for ps in concrete_params(&sig.params) {
            let abs: Vec<u32> = ps
                .iter()
                .zip(&sig.params)
                .map(|(&v, s)| if v != 0 { 0 } else if *s == Sort::Thread { 1 << o.zt } else { 1 << o.za })
                .collect();
            let Some(si) = nfa.symbols.iter().position(|s| s.event == e && s.values == abs) else {
                return false;
            };
            for q in 0..o.n_locations() {
                if o.step_event(LocSet::single(q), &phi, e, &ps) != nfa.delta[q][si] {
                    return false;
                }
            }
        }
    }
    true
}

fn nfa_fidelity() -> Outcome {
    let mut sources = Vec::new();
    for n in 1..=4 {
        sources.extend(family(n, 1));
    }
    for n in 1..=3 {
        sources.extend(family(n, 2));
    }
    let exhaustive = sources.len();
    let mut rng = StdRng::seed_from_u64(6);
    for _ in 0..1000 {
        let edges = rng.gen_range(2..=8);
        sources.push(random_automaton(&mut rng, 4, edges));
    }
    let mut mismatches = 0;
    for s in &sources {
        if !step_fidelity(&parse_automaton(s).unwrap()) {
            mismatches += 1;
        }
    }
    let msg = format!(
        "{} automata ({exhaustive} from the exhaustive one- and two-transition families), {mismatches} mismatches",
        sources.len()
    );
    if mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// A straight-line procedure of `n` premise-free commands under EBR.
fn straight_line(n: usize) -> Program {
    let mut rng = StdRng::seed_from_u64(n as u64);
    let ptr = ["p", "q", "s", "w"];
    let mut body = vec!["@inv angel r;".to_string()];
    let mut count = 1;
    while count < n {
        let x = ptr[rng.gen_range(0..4)];
        let y = ptr[rng.gen_range(0..4)];
        let g = ["Head", "Tail"][rng.gen_range(0..2)];
        let (s, k) = match rng.gen_range(0..7) {
            0 => (format!("{x} = {g};"), 1),
            1 => (format!("{g} = {x};"), 1),
            2 => (format!("{x} = {y};"), 1),
            3 => (format!("{x} = malloc;"), 1),
            4 => ("atomic { enter leaveQ(); exit leaveQ; @inv active(r); }".to_string(), 3),
            5 => (format!("@inv {x} in r;"), 1),
            _ => ("enter enterQ(); exit enterQ;".to_string(), 2),
        };
        body.push(s);
        count += k;
    }
    let src = format!(
        "struct Node {{ data; next; }} shared Head, Tail; proc t {{ local p, q, s, w; angel r; {} }}",
        body.join(" ")
    );
    parse_program(&src).unwrap()
}

fn complexity() -> Outcome {
    let o = load_builtin("ebr", true).unwrap();
    let ctx = TypeContext::new(o.clone());
    let table = SafeCallTable::from_automaton(&o);
    let mut times = Vec::new();
    for n in [100, 200, 400, 800] {
        let p = straight_line(n);
        let mut best = Duration::MAX;
        for _ in 0..5 {
            let t = Instant::now();
            let r = typecheck(&p, &ctx, &table).unwrap();
            best = best.min(t.elapsed());
            if r.procs.iter().any(|x| x.pops > x.bound) {
                return Err(format!("{n}: worklist bound exceeded"));
            }
        }
        times.push((n, best));
    }
    let base = times[0].1.as_secs_f64();
    let shown: Vec<String> = times.iter().map(|(n, t)| format!("{n}:{t:?}")).collect();
    for &(n, t) in &times[1..] {
        let quad = base * ((n / 100) as f64).powi(2);
        if t.as_secs_f64() > 5.0 * quad {
            return Err(format!("{n} commands took {t:?}, over 5x quadratic ({})", shown.join(" ")));
        }
    }
    Ok(format!("pops within bound, times {}", shown.join(" ")))
}

fn gc_equivalence() -> Outcome {
    let auts: Vec<SmrAutomaton> = ["base", "ebr", "hp2"].iter().map(|n| load_builtin(n, true).unwrap()).collect();
    let mut bad = Vec::new();
    for e in MICRO {
        let p = e.program();
        let fps: Vec<u64> = auts
            .iter()
            .map(|o| explore(&p, o, &Budget::default(), Mode::Asserts).unwrap().fingerprint)
            .collect();
        if fps.iter().any(|f| *f != fps[0]) {
            bad.push(e.name);
        }
    }
    if bad.is_empty() {
        Ok(format!("{} micro-programs, identical fingerprints under base, ebr, hp2", MICRO.len()))
    } else {
        Err(format!("fingerprints differ on {}", bad.join(", ")))
    }
}

fn main() {
    // libtest-style filtering: `cargo test --test acceptance -- 4 7`
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("corpus typechecks", corpus_types),
        ("negative controls", negative_controls),
        ("instrumentation agreement", instrumentation_agreement),
        ("soundness spot check", soundness),
        ("lattice and closure laws", lattice_laws),
        ("nfa step fidelity", nfa_fidelity),
        ("complexity envelope", complexity),
        ("gc equivalence", gc_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match r {
            Ok(msg) => println!("criterion {id} ({name}): PASS  {msg}  [{:.1?}]", t.elapsed()),
            Err(msg) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL  {msg}  [{:.1?}]", t.elapsed());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

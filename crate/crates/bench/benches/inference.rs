use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use smrcheck::automata::load_builtin;
use smrcheck::corpus::STRUCTURES;
use smrcheck::inference::typecheck;
use smrcheck::rules::SafeCallTable;
use smrcheck::types::TypeContext;
use smrcheck_bench::straight_line;

fn corpus(c: &mut Criterion) {
    let mut g = c.benchmark_group("typecheck");
    for e in STRUCTURES {
        let o = load_builtin(e.smr, true).unwrap();
        let table = SafeCallTable::from_automaton(&o);
        let ctx = TypeContext::new(o);
        let p = e.program();
        g.bench_function(e.name, |b| b.iter(|| typecheck(&p, &ctx, &table).unwrap()));
    }
    g.finish();
}

fn scaling(c: &mut Criterion) {
    let o = load_builtin("ebr", true).unwrap();
    let table = SafeCallTable::from_automaton(&o);
    let ctx = TypeContext::new(o);
    let mut g = c.benchmark_group("straight_line");
    for n in [100, 200, 400, 800] {
        let p = straight_line(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| b.iter(|| typecheck(p, &ctx, &table).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, corpus, scaling);
criterion_main!(benches);

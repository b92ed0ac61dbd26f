use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ocrrag_bench::text;
use ocrrag_core::metrics::{edit_distance_norm, lcs_score};
use std::hint::black_box;

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("metrics");
    for words in [10, 100, 1000] {
        let a = text(words, 1);
        let b = text(words, 2);
        group.bench_with_input(
            BenchmarkId::new("edit_distance_norm", a.len()),
            &(&a, &b),
            |bench, (a, b)| bench.iter(|| edit_distance_norm(black_box(a), black_box(b)).unwrap()),
        );
        let evidence = text(words / 5 + 1, 3);
        group.bench_with_input(
            BenchmarkId::new("lcs_score", b.len()),
            &(&evidence, &b),
            |bench, (e, b)| bench.iter(|| lcs_score(black_box(e), black_box(b)).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);

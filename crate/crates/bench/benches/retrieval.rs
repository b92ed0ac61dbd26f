use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ocrrag_bench::{knowledge_base, text};
use ocrrag_core::docmodel::{parse_doc, Domain};
use ocrrag_core::retrieval::{bm25_query, chunk_doc, ChunkParams};
use std::hint::black_box;

fn bm25(c: &mut Criterion) {
    let mut group = c.benchmark_group("bm25_query");
    let query = text(12, 99);
    for n in [100, 1000, 10_000] {
        let kb = knowledge_base(n, 200);
        group.bench_with_input(BenchmarkId::from_parameter(n), &kb, |bench, kb| {
            bench.iter(|| bm25_query(kb, "q", black_box(&query), 5).unwrap())
        });
    }
    group.finish();
}

fn chunking(c: &mut Criterion) {
    let doc = parse_doc(&text(20_000, 7), "bench", 1, Domain::Academic).unwrap();
    let params = ChunkParams::default();
    c.bench_function("chunk_doc_20k_tokens", |bench| {
        bench.iter(|| chunk_doc(black_box(&doc), &params).unwrap())
    });
}

criterion_group!(benches, bm25, chunking);
criterion_main!(benches);

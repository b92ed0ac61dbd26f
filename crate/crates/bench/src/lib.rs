//! Input generators shared by the benchmarks.

use ocrrag_core::docmodel::Domain;
use ocrrag_core::retrieval::{tokenize, ChunkParams};
use ocrrag_core::{Chunk, KnowledgeBase};

const WORDS: [&str; 16] = [
    "revenue", "tenant", "bond", "variance", "signal", "harbour", "council", "permit", "graph",
    "protein", "inverter", "drought", "coffee", "ratio", "segment", "notice",
];

/// Deterministic pseudo-random text of `n` words.
pub fn text(n: usize, seed: u64) -> String {
    let mut x = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            WORDS[(x % WORDS.len() as u64) as usize]
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A knowledge base of `n` chunks of `len` words each.
pub fn knowledge_base(n: usize, len: usize) -> KnowledgeBase {
    let chunks = (0..n)
        .map(|i| {
            let t = text(len, i as u64 + 1);
            Chunk {
                chunk_id: format!("bench:p{i}:c0"),
                doc_id: "bench".into(),
                page_no: i as u32,
                token_span: (0, tokenize(&t).len()),
                text: t,
            }
        })
        .collect();
    KnowledgeBase::from_chunks(Domain::Academic, ChunkParams::default(), chunks)
}

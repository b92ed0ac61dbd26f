use super::{tokenize, Hit, KnowledgeBase, RetrievalError, RetrievalResult, Retriever};
use crate::docmodel::QaRecord;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Stats {
    /// Number of chunks containing each term.
    pub doc_freqs: BTreeMap<String, usize>,
    pub chunk_lengths: Vec<usize>,
    pub avg_len: f64,
    pub n: usize,
}

impl Bm25Stats {
    pub fn compute(terms: &[Vec<String>]) -> Self {
        let mut doc_freqs: BTreeMap<String, usize> = BTreeMap::new();
        for chunk in terms {
            let mut seen: Vec<&String> = chunk.iter().collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *doc_freqs.entry(t.clone()).or_default() += 1;
            }
        }
        let chunk_lengths: Vec<usize> = terms.iter().map(Vec::len).collect();
        let n = terms.len();
        let avg_len = if n == 0 {
            0.0
        } else {
            chunk_lengths.iter().sum::<usize>() as f64 / n as f64
        };
        Self {
            doc_freqs,
            chunk_lengths,
            avg_len,
            n,
        }
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freqs.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (self.n as f64 - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Term to `(chunk index, term frequency)` lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Postings(HashMap<String, Vec<(usize, usize)>>);

impl Postings {
    pub(crate) fn build(terms: &[Vec<String>]) -> Self {
        let mut map: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (i, chunk) in terms.iter().enumerate() {
            let mut tf: HashMap<&str, usize> = HashMap::new();
            for t in chunk {
                *tf.entry(t).or_default() += 1;
            }
            for (t, f) in tf {
                map.entry(t.to_string()).or_default().push((i, f));
            }
        }
        Self(map)
    }
}

/// Scores every chunk against `query` and returns the best `k`. Query terms
/// count with multiplicity; ties go to the smaller chunk id.
pub fn bm25_query(
    kb: &KnowledgeBase,
    query_id: &str,
    query: &str,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if kb.is_empty() {
        return Err(RetrievalError::EmptyKnowledgeBase);
    }
    let stats = &kb.bm25_stats;
    let mut query_tf: BTreeMap<String, usize> = BTreeMap::new();
    for t in tokenize(query) {
        *query_tf.entry(t).or_default() += 1;
    }
    let mut scores = vec![0.0f64; kb.len()];
    for (term, qf) in &query_tf {
        let Some(list) = kb.postings().0.get(term) else {
            continue;
        };
        let idf = stats.idf(term);
        for &(i, tf) in list {
            let len = stats.chunk_lengths[i] as f64;
            let norm = if stats.avg_len > 0.0 {
                1.0 - BM25_B + BM25_B * len / stats.avg_len
            } else {
                1.0
            };
            let tf = tf as f64;
            scores[i] += *qf as f64 * idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
        }
    }
    let mut order: Vec<usize> = (0..kb.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| kb.chunks[a].chunk_id.cmp(&kb.chunks[b].chunk_id))
    });
    let hits = order
        .into_iter()
        .take(k)
        .map(|i| Hit {
            chunk_id: kb.chunks[i].chunk_id.clone(),
            score: scores[i],
        })
        .collect();
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        hits,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bm25Retriever;

impl Retriever for Bm25Retriever {
    fn name(&self) -> &str {
        "bm25"
    }

    fn retrieve(
        &self,
        kb: &KnowledgeBase,
        qa: &QaRecord,
        k: usize,
    ) -> Result<RetrievalResult, RetrievalError> {
        bm25_query(kb, &qa.qa_id, &qa.question, k)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Chunk, ChunkParams};
    use super::*;
    use crate::docmodel::Domain;

    fn kb(texts: &[&str]) -> KnowledgeBase {
        let chunks = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                chunk_id: format!("c{i}"),
                doc_id: "d".into(),
                page_no: i as u32 + 1,
                token_span: (0, 0),
                text: t.to_string(),
            })
            .collect();
        KnowledgeBase::from_chunks(Domain::Manual, ChunkParams::default(), chunks)
    }

    #[test]
    fn toy_corpus_matches_hand_computation() {
        let kb = kb(&["a b", "a a b", "c"]);
        let res = bm25_query(&kb, "q", "a", 3).unwrap();
        // N=3, df(a)=2, lengths 2,3,1 so avg_len=2
        let idf = (1.0f64 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let score = |tf: f64, len: f64| idf * tf * 2.5 / (tf + 1.5 * (0.25 + 0.75 * len / 2.0));
        let want = [
            ("c1", score(2.0, 3.0)),
            ("c0", score(1.0, 2.0)),
            ("c2", 0.0),
        ];
        assert_eq!(res.hits.len(), 3);
        for (hit, (id, s)) in res.hits.iter().zip(want) {
            assert_eq!(hit.chunk_id, id);
            assert!((hit.score - s).abs() < 1e-12, "{} vs {s}", hit.score);
        }
    }

    #[test]
    fn no_overlap_falls_back_to_id_order() {
        let kb = kb(&["x", "y", "z"]);
        let res = bm25_query(&kb, "q", "nothing", 2).unwrap();
        let ids: Vec<_> = res.hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["c0", "c1"]);
        assert!(res.hits.iter().all(|h| h.score == 0.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            bm25_query(&kb(&["x"]), "q", "x", 0),
            Err(RetrievalError::InvalidK)
        ));
        assert!(matches!(
            bm25_query(&kb(&[]), "q", "x", 1),
            Err(RetrievalError::EmptyKnowledgeBase)
        ));
    }
}

//! Tokenization, chunking, per-domain knowledge bases and retrievers.

mod bm25;
mod dense;

use bm25::Postings;
pub use bm25::{bm25_query, Bm25Retriever, Bm25Stats, BM25_B, BM25_K1};
pub use dense::{
    cosine, dense_query, DenseIndex, DenseRetriever, EmbeddingCache, EmbeddingClient,
    HttpEmbeddingClient,
};

use crate::corpus::PageRecord;
use crate::docmodel::{serialize_doc, Domain, PageKey, QaRecord, StructuredDoc};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Chunk size used by default: 1024 tokens, no overlap.
pub const DEFAULT_CHUNK_SIZE: usize = 1024;
/// Number of chunks retrieved per question by default.
pub const DEFAULT_TOP_K: usize = 2;
/// Bumped whenever the persisted knowledge-base layout changes.
pub const KB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid chunk parameters: size {size}, overlap {overlap}")]
    InvalidChunkParams { size: usize, overlap: usize },
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("k must be positive")]
    InvalidK,
    #[error("page {page} belongs to {found}, not {expected}")]
    DomainMismatch {
        page: PageKey,
        expected: Domain,
        found: Domain,
    },
    #[error("embedding dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("knowledge base file has format version {found}, expected {expected}")]
    FormatVersion { found: u32, expected: u32 },
    #[error("knowledge base statistics do not match its chunks")]
    InconsistentStats,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// A token and its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2A6DF) // extension B
}

/// Lowercased word, number and CJK-character tokens with their spans.
/// Punctuation is dropped; `3.14` and `1,000` stay single tokens.
pub fn tokenize_spans(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run: Option<usize> = None;
    let mut chars = text.char_indices().peekable();
    let close = |tokens: &mut Vec<Token>, start: usize, end: usize| {
        tokens.push(Token {
            text: text[start..end].to_lowercase(),
            start,
            end,
        });
    };
    while let Some((i, c)) = chars.next() {
        if is_cjk(c) {
            if let Some(start) = run.take() {
                close(&mut tokens, start, i);
            }
            close(&mut tokens, i, i + c.len_utf8());
        } else if c.is_alphanumeric() {
            run.get_or_insert(i);
        } else if matches!(c, '.' | ',')
            && run.is_some()
            && text[..i].ends_with(|p: char| p.is_ascii_digit())
            && chars.peek().is_some_and(|&(_, n)| n.is_ascii_digit())
        {
            // decimal point or thousands separator inside a number
        } else if let Some(start) = run.take() {
            close(&mut tokens, start, i);
        }
    }
    if let Some(start) = run {
        close(&mut tokens, start, text.len());
    }
    tokens
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkStrategy {
    /// Fixed token windows that ignore block boundaries.
    #[default]
    Window,
    /// Windows shortened to end on a block boundary where one is available.
    BlockAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub size: usize,
    pub overlap: usize,
    #[serde(default)]
    pub strategy: ChunkStrategy,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            size: DEFAULT_CHUNK_SIZE,
            overlap: 0,
            strategy: ChunkStrategy::Window,
        }
    }
}

impl ChunkParams {
    pub fn new(size: usize, overlap: usize) -> Self {
        Self {
            size,
            overlap,
            strategy: ChunkStrategy::Window,
        }
    }

    fn validate(&self) -> Result<(), RetrievalError> {
        if self.size == 0 || self.overlap >= self.size {
            return Err(RetrievalError::InvalidChunkParams {
                size: self.size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub page_no: u32,
    /// Token indices `[start, end)` within the page.
    pub token_span: (usize, usize),
    pub text: String,
}

impl Chunk {
    pub fn page(&self) -> PageKey {
        PageKey::new(&self.doc_id, self.page_no)
    }

    pub fn token_len(&self) -> usize {
        self.token_span.1 - self.token_span.0
    }
}

/// Token windows `[start, end)` over `n` tokens. `boundaries` lists token
/// indices where a block starts; it is only consulted for block alignment.
pub fn chunk_spans(
    n: usize,
    params: &ChunkParams,
    boundaries: &[usize],
) -> Result<Vec<(usize, usize)>, RetrievalError> {
    params.validate()?;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + params.size).min(n);
        if params.strategy == ChunkStrategy::BlockAligned && end < n {
            if let Some(&b) = boundaries.iter().rev().find(|&&b| b > start && b <= end) {
                end = b;
            }
        }
        spans.push((start, end));
        if end == n {
            break;
        }
        start = if end - start > params.overlap {
            end - params.overlap
        } else {
            end
        };
    }
    Ok(spans)
}

/// Chunks one page of text. The text of consecutive chunks runs from one
/// chunk's first token to the next chunk's first token, so without overlap
/// the chunk texts concatenate back to the page.
pub fn chunk_text(
    doc_id: &str,
    page_no: u32,
    text: &str,
    params: &ChunkParams,
    boundaries: &[usize],
) -> Result<Vec<Chunk>, RetrievalError> {
    let tokens = tokenize_spans(text);
    let spans = chunk_spans(tokens.len(), params, boundaries)?;
    let last = spans.len().saturating_sub(1);
    Ok(spans
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let from = if i == 0 { 0 } else { tokens[s].start };
            let to = if i == last {
                text.len()
            } else {
                tokens[e].start
            };
            Chunk {
                chunk_id: format!("{doc_id}:p{page_no}:c{i}"),
                doc_id: doc_id.to_string(),
                page_no,
                token_span: (s, e),
                text: text[from..to].to_string(),
            }
        })
        .collect())
}

/// Chunks the serialized form of a parsed page.
pub fn chunk_doc(doc: &StructuredDoc, params: &ChunkParams) -> Result<Vec<Chunk>, RetrievalError> {
    let text = serialize_doc(doc);
    let boundaries = if params.strategy == ChunkStrategy::BlockAligned {
        block_token_boundaries(doc)
    } else {
        Vec::new()
    };
    chunk_text(&doc.doc_id, doc.page_no, &text, params, &boundaries)
}

fn block_token_boundaries(doc: &StructuredDoc) -> Vec<usize> {
    (1..doc.blocks.len())
        .map(|i| tokenize(&crate::docmodel::serialize_blocks(&doc.blocks[..i])).len())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// A per-domain chunk store with BM25 statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub format_version: u32,
    pub domain: Domain,
    pub params: ChunkParams,
    pub chunks: Vec<Chunk>,
    pub bm25_stats: Bm25Stats,
    #[serde(skip)]
    postings: Postings,
    #[serde(skip)]
    fingerprint: String,
}

fn fingerprint(domain: Domain, chunks: &[Chunk]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(domain.as_str());
    for c in chunks {
        h.update([0]);
        h.update(&c.chunk_id);
        h.update([0]);
        h.update(&c.text);
    }
    hex::encode(h.finalize())
}

impl KnowledgeBase {
    pub fn from_chunks(domain: Domain, params: ChunkParams, chunks: Vec<Chunk>) -> Self {
        let terms: Vec<Vec<String>> = chunks.iter().map(|c| tokenize(&c.text)).collect();
        Self {
            format_version: KB_FORMAT_VERSION,
            domain,
            params,
            bm25_stats: Bm25Stats::compute(&terms),
            postings: Postings::build(&terms),
            fingerprint: fingerprint(domain, &chunks),
            chunks,
        }
    }

    /// Chunks the raw content of every page. All pages must be in `domain`.
    pub fn build<'a>(
        domain: Domain,
        pages: impl IntoIterator<Item = &'a PageRecord>,
        params: ChunkParams,
    ) -> Result<Self, RetrievalError> {
        let mut chunks = Vec::new();
        for page in pages {
            if page.domain != domain {
                return Err(RetrievalError::DomainMismatch {
                    page: page.key(),
                    expected: domain,
                    found: page.domain,
                });
            }
            chunks.extend(chunk_text(
                &page.doc_id,
                page.page_no,
                &page.content,
                &params,
                &[],
            )?);
        }
        Ok(Self::from_chunks(domain, params, chunks))
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }

    /// Hash over the domain and every chunk id and text.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub(crate) fn postings(&self) -> &Postings {
        &self.postings
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let mut kb: KnowledgeBase = serde_json::from_slice(&fs::read(path)?)?;
        if kb.format_version != KB_FORMAT_VERSION {
            return Err(RetrievalError::FormatVersion {
                found: kb.format_version,
                expected: KB_FORMAT_VERSION,
            });
        }
        let terms: Vec<Vec<String>> = kb.chunks.iter().map(|c| tokenize(&c.text)).collect();
        if Bm25Stats::compute(&terms) != kb.bm25_stats {
            return Err(RetrievalError::InconsistentStats);
        }
        kb.postings = Postings::build(&terms);
        kb.fingerprint = fingerprint(kb.domain, &kb.chunks);
        Ok(kb)
    }

    /// `kb/<domain>.json` inside `dir`.
    pub fn path_in(dir: &Path, domain: Domain) -> std::path::PathBuf {
        dir.join(format!("{}.json", domain.as_str()))
    }
}

/// Anything that can rank a knowledge base for a question.
pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;
    fn retrieve(
        &self,
        kb: &KnowledgeBase,
        qa: &QaRecord,
        k: usize,
    ) -> Result<RetrievalResult, RetrievalError>;
}

/// Returns every chunk of the question's gold page(s), in page order,
/// regardless of `k`. Used to isolate the generation stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRetriever;

impl Retriever for OracleRetriever {
    fn name(&self) -> &str {
        "oracle"
    }

    fn retrieve(
        &self,
        kb: &KnowledgeBase,
        qa: &QaRecord,
        k: usize,
    ) -> Result<RetrievalResult, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let hits = qa
            .pages()
            .iter()
            .flat_map(|page| kb.chunks.iter().filter(move |c| &c.page() == page))
            .map(|c| Hit {
                chunk_id: c.chunk_id.clone(),
                score: 1.0,
            })
            .collect();
        Ok(RetrievalResult {
            query_id: qa.qa_id.clone(),
            hits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Hello, world"), vec!["hello", "world"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("pi is 3.14, not 3."),
            vec!["pi", "is", "3.14", "not", "3"]
        );
        assert_eq!(
            tokenize("Revenue 1,250 USD"),
            vec!["revenue", "1,250", "usd"]
        );
        assert_eq!(tokenize("数据abc"), vec!["数", "据", "abc"]);
        assert_eq!(
            tokenize("**bold** \\textbf{x}"),
            vec!["bold", "textbf", "x"]
        );
    }

    #[test]
    fn spans_point_into_source() {
        let s = "Ünïcode words, 2.5kg";
        for t in tokenize_spans(s) {
            assert_eq!(s[t.start..t.end].to_lowercase(), t.text);
        }
    }

    #[test]
    fn chunk_arithmetic() {
        let sizes = |n, p: ChunkParams| -> Vec<usize> {
            chunk_spans(n, &p, &[])
                .unwrap()
                .iter()
                .map(|(s, e)| e - s)
                .collect()
        };
        assert_eq!(sizes(2500, ChunkParams::default()), vec![1024, 1024, 452]);
        assert_eq!(sizes(10, ChunkParams::default()), vec![10]);
        let starts: Vec<usize> = chunk_spans(2048, &ChunkParams::new(1024, 128), &[])
            .unwrap()
            .iter()
            .map(|s| s.0)
            .collect();
        assert_eq!(starts, vec![0, 896, 1792]);
        assert!(chunk_spans(0, &ChunkParams::default(), &[])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_params() {
        for (size, overlap) in [(0, 0), (4, 4), (4, 9)] {
            assert!(matches!(
                chunk_spans(10, &ChunkParams::new(size, overlap), &[]),
                Err(RetrievalError::InvalidChunkParams { .. })
            ));
        }
    }

    #[test]
    fn chunk_texts_concatenate_to_page() {
        let text = "  Alpha beta, gamma. Delta epsilon zeta eta theta!  ";
        let chunks = chunk_text("d", 1, text, &ChunkParams::new(3, 0), &[]).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(
            chunks.iter().map(|c| c.text.as_str()).collect::<String>(),
            text
        );
        assert_eq!(chunks[1].chunk_id, "d:p1:c1");
        assert_eq!(tokenize(&chunks[1].text), vec!["delta", "epsilon", "zeta"]);
    }

    #[test]
    fn block_aligned_chunks_end_on_blocks() {
        let doc = crate::docmodel::parse_doc(
            "one two three\n\nfour five\n\nsix seven eight nine",
            "d",
            1,
            Domain::Manual,
        )
        .unwrap();
        let params = ChunkParams {
            size: 4,
            overlap: 0,
            strategy: ChunkStrategy::BlockAligned,
        };
        let spans: Vec<_> = chunk_doc(&doc, &params)
            .unwrap()
            .iter()
            .map(|c| c.token_span)
            .collect();
        assert_eq!(spans, vec![(0, 3), (3, 5), (5, 9)]);
    }

    #[test]
    fn kb_save_load_and_version_check() {
        let pages = [
            PageRecord::new("a", 1, Domain::Law, "The court held the contract void."),
            PageRecord::new("a", 2, Domain::Law, "Damages were awarded."),
        ];
        let kb = KnowledgeBase::build(Domain::Law, &pages, ChunkParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = KnowledgeBase::path_in(dir.path(), Domain::Law);
        kb.save(&path).unwrap();
        let back = KnowledgeBase::load(&path).unwrap();
        assert_eq!(back, kb);
        assert_eq!(back.postings(), kb.postings());

        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        v["format_version"] = 99.into();
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            KnowledgeBase::load(&path),
            Err(RetrievalError::FormatVersion { found: 99, .. })
        ));
    }

    #[test]
    fn kb_rejects_foreign_pages() {
        let pages = [PageRecord::new("a", 1, Domain::Finance, "x")];
        assert!(matches!(
            KnowledgeBase::build(Domain::Law, &pages, ChunkParams::default()),
            Err(RetrievalError::DomainMismatch { .. })
        ));
    }
}

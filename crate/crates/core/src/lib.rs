//! Core library for measuring how OCR noise propagates through
//! retrieval-augmented generation pipelines.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`docmodel`] parses ground-truth pages (Markdown with embedded LaTeX) into
//!   a block AST and serialises them back.
//! * [`fmtnoise`] injects formatting noise at a controlled rate, strips it
//!   again, and converts tables between LaTeX, Markdown and HTML.
//! * [`imgnoise`] applies semantic-noise distortions to page images.
//! * [`metrics`] holds edit distance, evidence LCS, answer F1 and `r_noise`.
//! * [`retrieval`] tokenises, chunks and indexes pages (BM25 and dense).
//! * [`generation`] renders prompts and talks to chat endpoints.
//! * [`qafilter`] implements the rule-based Q&A quality filters.
//! * [`harness`] runs the retrieval, generation and end-to-end evaluations.

pub mod corpus;
pub mod docmodel;
pub mod fmtnoise;
pub mod generation;
pub mod harness;
pub mod http;
pub mod imgnoise;
pub mod metrics;
pub mod qafilter;
pub mod retrieval;
mod seed;

pub use docmodel::{
    Block, BlockKind, Domain, EvidenceSource, QaRecord, StructuredDoc, TableFormat,
};
pub use fmtnoise::{FmtPlan, FmtRule};
pub use harness::EvalReport;
pub use metrics::MetricValue;
pub use retrieval::{Chunk, KnowledgeBase, RetrievalResult};

//! JSONL page and QA files, and the on-disk fixture layout.
//!
//! A fixture corpus directory holds one Markdown file per page at
//! `<domain>/<doc_id>__p<page_no>.md` and a `qa.jsonl` next to the domain
//! folders.

use crate::docmodel::{parse_doc, Domain, PageKey, ParseError, QaRecord, StructuredDoc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Layout { path: PathBuf, message: String },
    #[error("page {page}: {source}")]
    Parse { page: PageKey, source: ParseError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One page of a document. Fields this crate does not know about are kept
/// and written back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub doc_id: String,
    pub page_no: u32,
    pub domain: Domain,
    pub content: String,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl PageRecord {
    pub fn new(doc_id: &str, page_no: u32, domain: Domain, content: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            page_no,
            domain,
            content: content.into(),
            extra: serde_json::Map::new(),
        }
    }

    pub fn key(&self) -> PageKey {
        PageKey::new(&self.doc_id, self.page_no)
    }

    pub fn parse(&self) -> Result<StructuredDoc, CorpusError> {
        parse_doc(&self.content, &self.doc_id, self.page_no, self.domain).map_err(|source| {
            CorpusError::Parse {
                page: self.key(),
                source,
            }
        })
    }

    /// Records which noise produced this page.
    pub fn tag_noise(&mut self, noise: &str, rate: f64, seed: u64) {
        self.extra.insert("noise".into(), noise.into());
        self.extra.insert("rate".into(), rate.into());
        self.extra.insert("seed".into(), seed.into());
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| CorpusError::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_pages(path: &Path) -> Result<Vec<PageRecord>, CorpusError> {
    read_jsonl(path)
}

pub fn read_qas(path: &Path) -> Result<Vec<QaRecord>, CorpusError> {
    read_jsonl(path)
}

/// Page texts keyed by page.
pub fn page_map(pages: &[PageRecord]) -> HashMap<PageKey, String> {
    pages.iter().map(|p| (p.key(), p.content.clone())).collect()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub pages: Vec<PageRecord>,
    pub qas: Vec<QaRecord>,
}

impl Corpus {
    /// Loads a fixture directory. Pages are sorted by domain, document and
    /// page number so the order never depends on the filesystem.
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut pages = Vec::new();
        for domain in Domain::ALL {
            let sub = dir.join(domain.as_str());
            if !sub.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&sub).map_err(io_err(&sub))? {
                let path = entry.map_err(io_err(&sub))?.path();
                if path.extension().is_none_or(|e| e != "md") {
                    continue;
                }
                let (doc_id, page_no) = page_name(&path)?;
                let content = fs::read_to_string(&path).map_err(io_err(&path))?;
                pages.push(PageRecord::new(
                    &doc_id,
                    page_no,
                    domain,
                    content.trim_end(),
                ));
            }
        }
        pages.sort_by(|a, b| {
            (a.domain, &a.doc_id, a.page_no).cmp(&(b.domain, &b.doc_id, b.page_no))
        });
        let qa_path = dir.join("qa.jsonl");
        let qas = if qa_path.exists() {
            read_qas(&qa_path)?
        } else {
            Vec::new()
        };
        Ok(Self { pages, qas })
    }

    /// The corpus shipped with this crate.
    pub fn fixture() -> Result<Self, CorpusError> {
        Self::load_dir(&fixture_dir())
    }

    pub fn page_map(&self) -> HashMap<PageKey, String> {
        page_map(&self.pages)
    }

    pub fn docs(&self) -> Result<Vec<StructuredDoc>, CorpusError> {
        self.pages.iter().map(PageRecord::parse).collect()
    }
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join("corpus")
}

fn page_name(path: &Path) -> Result<(String, u32), CorpusError> {
    let bad = || CorpusError::Layout {
        path: path.to_path_buf(),
        message: "expected <doc_id>__p<page_no>.md".into(),
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(bad)?;
    let (doc, page) = stem.rsplit_once("__p").ok_or_else(bad)?;
    let page_no = page.parse().map_err(|_| bad())?;
    Ok((doc.to_string(), page_no))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_survive_a_round_trip() {
        let line = r#"{"doc_id":"d","page_no":2,"domain":"law","content":"x","ocr":"mineru"}"#;
        let mut rec: PageRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.extra["ocr"], "mineru");
        rec.tag_noise("fmt", 0.3, 42);
        let back = serde_json::to_value(&rec).unwrap();
        assert_eq!(back["ocr"], "mineru");
        assert_eq!(back["noise"], "fmt");
        assert_eq!(back["seed"], 42);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/pages.jsonl");
        let pages = vec![
            PageRecord::new("a", 1, Domain::Finance, "one"),
            PageRecord::new("a", 2, Domain::Finance, "two"),
        ];
        write_jsonl(&path, &pages).unwrap();
        assert_eq!(read_pages(&path).unwrap(), pages);
    }

    #[test]
    fn bad_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        fs::write(&path, "\n{oops}\n").unwrap();
        match read_pages(&path) {
            Err(CorpusError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn page_names() {
        assert_eq!(
            page_name(Path::new("x/annual_report__p3.md")).unwrap(),
            ("annual_report".to_string(), 3)
        );
        assert!(page_name(Path::new("x/bad.md")).is_err());
    }
}

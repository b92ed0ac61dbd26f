//! Ground-truth page model.
//!
//! A page is Markdown with embedded LaTeX: inline `$…$` and display `$$…$$`
//! formulas, LaTeX/HTML/pipe tables, and charts wrapped in `<chart>` tags.
//! [`parse_doc`] turns it into an ordered list of [`Block`]s and
//! [`serialize_doc`] writes the canonical form back out.
//!
//! Canonical form: LF line endings, exactly one blank line between blocks,
//! except that an inline formula is glued to the text around it. Paragraph
//! breaks that fall between a text run and an inline formula are kept inside
//! the text block as a leading or trailing `"\n\n"`, which is what makes
//! `parse(serialize(d)) == d` hold for every parsed document.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Textbook,
    Law,
    Finance,
    Newspaper,
    Manual,
    Academic,
    Administration,
}

impl Domain {
    pub const ALL: [Domain; 7] = [
        Domain::Textbook,
        Domain::Law,
        Domain::Finance,
        Domain::Newspaper,
        Domain::Manual,
        Domain::Academic,
        Domain::Administration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Textbook => "textbook",
            Domain::Law => "law",
            Domain::Finance => "finance",
            Domain::Newspaper => "newspaper",
            Domain::Manual => "manual",
            Domain::Academic => "academic",
            Domain::Administration => "administration",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == lower)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TableFormat {
    #[serde(rename = "latex")]
    Latex,
    #[serde(rename = "markdown")]
    Markdown,
    #[serde(rename = "html")]
    Html,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "latex" => Ok(TableFormat::Latex),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "html" => Ok(TableFormat::Html),
            _ => Err(format!("unknown table format `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BlockKind {
    Text,
    /// Heading level, 1 to 6.
    Heading {
        level: u8,
    },
    InlineFormula,
    BlockFormula,
    Table {
        format: TableFormat,
    },
    Chart,
}

impl BlockKind {
    pub fn is_inline(self) -> bool {
        matches!(self, BlockKind::Text | BlockKind::InlineFormula)
    }
}

/// One element of a page. `content` is the raw source without the block's
/// own delimiters (`$`, `$$`, `#`, `<chart>`); tables keep their full markup.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub content: String,
}

impl Block {
    pub fn new(kind: BlockKind, content: impl Into<String>) -> Self {
        Self {
            kind,
            content: content.into(),
        }
    }

    pub fn text(content: impl Into<String>) -> Self {
        Self::new(BlockKind::Text, content)
    }

    pub fn heading(level: u8, content: impl Into<String>) -> Self {
        Self::new(BlockKind::Heading { level }, content)
    }

    pub fn inline_formula(content: impl Into<String>) -> Self {
        Self::new(BlockKind::InlineFormula, content)
    }

    pub fn block_formula(content: impl Into<String>) -> Self {
        Self::new(BlockKind::BlockFormula, content)
    }

    pub fn table(format: TableFormat, content: impl Into<String>) -> Self {
        Self::new(BlockKind::Table { format }, content)
    }

    pub fn chart(content: impl Into<String>) -> Self {
        Self::new(BlockKind::Chart, content)
    }

    pub fn to_source(&self) -> String {
        match self.kind {
            BlockKind::Text | BlockKind::Table { .. } => self.content.clone(),
            BlockKind::Heading { level } => {
                format!("{} {}", "#".repeat(level as usize), self.content)
            }
            BlockKind::InlineFormula => format!("${}$", self.content),
            BlockKind::BlockFormula => format!("$${}$$", self.content),
            BlockKind::Chart => format!("<chart>{}</chart>", self.content),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredDoc {
    pub doc_id: String,
    pub page_no: u32,
    pub domain: Domain,
    pub blocks: Vec<Block>,
}

impl StructuredDoc {
    pub fn key(&self) -> PageKey {
        PageKey::new(&self.doc_id, self.page_no)
    }
}

/// Identifies one page of one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageKey {
    pub doc_id: String,
    pub page_no: u32,
}

impl PageKey {
    pub fn new(doc_id: &str, page_no: u32) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            page_no,
        }
    }
}

impl fmt::Display for PageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.page_no)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceSource {
    #[serde(rename = "TXT")]
    Txt,
    #[serde(rename = "TAB")]
    Tab,
    #[serde(rename = "FOR")]
    For,
    #[serde(rename = "CHA")]
    Cha,
    #[serde(rename = "RO")]
    Ro,
}

impl EvidenceSource {
    pub const ALL: [EvidenceSource; 5] = [
        EvidenceSource::Txt,
        EvidenceSource::Tab,
        EvidenceSource::For,
        EvidenceSource::Cha,
        EvidenceSource::Ro,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceSource::Txt => "TXT",
            EvidenceSource::Tab => "TAB",
            EvidenceSource::For => "FOR",
            EvidenceSource::Cha => "CHA",
            EvidenceSource::Ro => "RO",
        }
    }

    /// Tables, formulas and charts.
    pub fn is_multimodal(self) -> bool {
        matches!(
            self,
            EvidenceSource::Tab | EvidenceSource::For | EvidenceSource::Cha
        )
    }
}

impl fmt::Display for EvidenceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Understanding,
    Reasoning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    String,
    Numeric,
    YesNo,
    List,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qa_id: String,
    pub doc_id: String,
    pub page_no: u32,
    pub question: String,
    pub answers: Vec<String>,
    pub evidence: String,
    pub evidence_source: EvidenceSource,
    pub task: Task,
    #[serde(default)]
    pub multipage: bool,
    /// Second (and further) pages of a multi-page question.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub related_pages: Vec<u32>,
    pub answer_format: AnswerFormat,
    pub domain: Domain,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QaValidationError {
    #[error("qa {0}: answers must not be empty")]
    NoAnswers(String),
    #[error("qa {0}: evidence must not be empty")]
    EmptyEvidence(String),
    #[error("qa {0}: multi-page question needs a second page reference")]
    MissingSecondPage(String),
}

impl QaRecord {
    /// All pages the question draws on, primary page first.
    pub fn pages(&self) -> Vec<PageKey> {
        std::iter::once(self.page_no)
            .chain(self.related_pages.iter().copied())
            .map(|p| PageKey::new(&self.doc_id, p))
            .collect()
    }

    pub fn validate(&self) -> Result<(), QaValidationError> {
        if self.answers.is_empty() {
            return Err(QaValidationError::NoAnswers(self.qa_id.clone()));
        }
        if self.evidence.trim().is_empty() {
            return Err(QaValidationError::EmptyEvidence(self.qa_id.clone()));
        }
        if self.multipage && self.related_pages.is_empty() {
            return Err(QaValidationError::MissingSecondPage(self.qa_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unbalanced `{delimiter}` opened at line {line}, column {column}")]
    UnbalancedDelimiter {
        delimiter: &'static str,
        line: usize,
        column: usize,
    },
    #[error("document has no content")]
    EmptyDocument,
}

pub fn parse_doc(
    source: &str,
    doc_id: &str,
    page_no: u32,
    domain: Domain,
) -> Result<StructuredDoc, ParseError> {
    let normalized = source.replace("\r\n", "\n").replace('\r', "\n");
    let blocks = Parser::new(&normalized).run()?;
    if blocks.is_empty() {
        return Err(ParseError::EmptyDocument);
    }
    Ok(StructuredDoc {
        doc_id: doc_id.to_string(),
        page_no,
        domain,
        blocks,
    })
}

pub fn serialize_doc(doc: &StructuredDoc) -> String {
    serialize_blocks(&doc.blocks)
}

pub fn serialize_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 && !glued(blocks[i - 1].kind, block.kind) {
            out.push_str("\n\n");
        }
        out.push_str(&block.to_source());
    }
    out
}

fn glued(prev: BlockKind, next: BlockKind) -> bool {
    matches!(
        (prev, next),
        (BlockKind::Text, BlockKind::InlineFormula) | (BlockKind::InlineFormula, BlockKind::Text)
    )
}

/// Block contents in order, delimiters stripped, one newline between blocks.
pub fn plain_text_of(doc: &StructuredDoc) -> String {
    doc.blocks
        .iter()
        .map(|b| b.content.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

enum Segment {
    Flow(Vec<Block>),
    Standalone(Block),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    segments: Vec<Segment>,
}

const HEADING_COMMANDS: [(&str, u8); 6] = [
    ("\\section*{", 1),
    ("\\section{", 1),
    ("\\subsection*{", 2),
    ("\\subsection{", 2),
    ("\\subsubsection*{", 3),
    ("\\subsubsection{", 3),
];

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            pos: 0,
            segments: Vec::new(),
        }
    }

    fn run(mut self) -> Result<Vec<Block>, ParseError> {
        loop {
            self.skip_blank();
            if self.pos >= self.src.len() {
                break;
            }
            if let Some(block) = self.try_standalone()? {
                self.segments.push(Segment::Standalone(block));
            } else {
                let pieces = self.flow()?;
                if !pieces.is_empty() {
                    self.push_flow(pieces);
                }
            }
        }
        Ok(self
            .segments
            .into_iter()
            .flat_map(|s| match s {
                Segment::Flow(pieces) => pieces,
                Segment::Standalone(b) => vec![b],
            })
            .collect())
    }

    fn location(&self, at: usize) -> (usize, usize) {
        let before = &self.src[..at];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(at, |nl| at - nl - 1) + 1;
        (line, column)
    }

    fn unbalanced(&self, delimiter: &'static str, at: usize) -> ParseError {
        let (line, column) = self.location(at);
        ParseError::UnbalancedDelimiter {
            delimiter,
            line,
            column,
        }
    }

    /// Skips whitespace-only lines and any whitespace before the next content.
    fn skip_blank(&mut self) {
        let rest = &self.src[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn try_standalone(&mut self) -> Result<Option<Block>, ParseError> {
        let start = self.pos;
        let rest = self.rest();
        let at_line_start = start == 0 || self.src.as_bytes()[start - 1] == b'\n';

        if at_line_start {
            if let Some(block) = self.try_heading() {
                return Ok(Some(block));
            }
        }
        if let Some(body) = rest.strip_prefix("$$") {
            let close = find_unescaped(body, "$$").ok_or_else(|| self.unbalanced("$$", start))?;
            self.pos = start + 2 + close + 2;
            return Ok(Some(Block::block_formula(&body[..close])));
        }
        if rest.starts_with("\\begin{table}") {
            let end = find_env_end(rest, "\\begin{table}", "\\end{table}")
                .ok_or_else(|| self.unbalanced("\\begin{table}", start))?;
            self.pos = start + end;
            return Ok(Some(Block::table(TableFormat::Latex, &rest[..end])));
        }
        if rest.starts_with("\\begin{tabular}") {
            let end = find_env_end(rest, "\\begin{tabular}", "\\end{tabular}")
                .ok_or_else(|| self.unbalanced("\\begin{tabular}", start))?;
            self.pos = start + end;
            let wrapped = format!("\\begin{{table}}\n{}\n\\end{{table}}", &rest[..end]);
            return Ok(Some(Block::table(TableFormat::Latex, wrapped)));
        }
        if starts_with_tag(rest, "table") {
            let end = find_env_end(rest, "<table", "</table>")
                .ok_or_else(|| self.unbalanced("<table>", start))?;
            self.pos = start + end;
            return Ok(Some(Block::table(TableFormat::Html, &rest[..end])));
        }
        if let Some(body) = rest.strip_prefix("<chart>") {
            let close = body
                .find("</chart>")
                .ok_or_else(|| self.unbalanced("<chart>", start))?;
            self.pos = start + "<chart>".len() + close + "</chart>".len();
            return Ok(Some(Block::chart(&body[..close])));
        }
        if rest.starts_with('|') {
            let mut end = 0;
            for line in rest.split_inclusive('\n') {
                if !line.trim_start().starts_with('|') {
                    break;
                }
                end += line.len();
            }
            let content = rest[..end].trim_end();
            self.pos = start + content.len();
            return Ok(Some(Block::table(TableFormat::Markdown, content)));
        }
        Ok(None)
    }

    fn try_heading(&mut self) -> Option<Block> {
        let rest = self.rest();
        let line_len = rest.find('\n').unwrap_or(rest.len());
        let line = &rest[..line_len];

        let hashes = line.bytes().take_while(|&b| b == b'#').count();
        if (1..=6).contains(&hashes) && line[hashes..].starts_with(' ') {
            let text = line[hashes..].trim();
            if !text.is_empty() {
                self.pos += line_len;
                return Some(Block::heading(hashes as u8, text));
            }
        }

        let trimmed = line.trim_end();
        for (prefix, level) in HEADING_COMMANDS {
            if let Some(body) = trimmed.strip_prefix(prefix) {
                if matching_brace(body) == Some(body.len() - 1) {
                    let text = body[..body.len() - 1].trim();
                    if !text.is_empty() && !text.contains('\n') {
                        self.pos += line_len;
                        return Some(Block::heading(level, text));
                    }
                }
            }
        }
        None
    }

    /// Reads one paragraph of text and inline formulas.
    fn flow(&mut self) -> Result<Vec<Block>, ParseError> {
        let src = self.src;
        let bytes = src.as_bytes();
        let mut pieces = Vec::new();
        let mut text_start = self.pos;
        let mut i = self.pos;
        let end = loop {
            if i >= src.len() {
                break i;
            }
            match bytes[i] {
                b'\\' => {
                    i += 1;
                    if let Some(c) = src[i..].chars().next() {
                        i += c.len_utf8();
                    }
                }
                b'$' => {
                    if bytes.get(i + 1) == Some(&b'$') {
                        break i;
                    }
                    let body = &src[i + 1..];
                    let limit = paragraph_end(body);
                    let close = find_unescaped(&body[..limit], "$")
                        .ok_or_else(|| self.unbalanced("$", i))?;
                    if text_start < i {
                        pieces.push(Block::text(&src[text_start..i]));
                    }
                    pieces.push(Block::inline_formula(&body[..close]));
                    i = i + 1 + close + 1;
                    text_start = i;
                }
                b'\n' => {
                    let next = &src[i + 1..];
                    let next_line = next.split('\n').next().unwrap_or("");
                    if next_line.trim().is_empty() || starts_block(next_line) {
                        break i;
                    }
                    i += 1;
                }
                _ => i += 1,
            }
        };
        if text_start < end {
            pieces.push(Block::text(&src[text_start..end]));
        }
        self.pos = end;

        if let Some(first) = pieces.first_mut() {
            if first.kind == BlockKind::Text {
                first.content = first.content.trim_start().to_string();
            }
        }
        if let Some(last) = pieces.last_mut() {
            if last.kind == BlockKind::Text {
                last.content = last.content.trim_end().to_string();
            }
        }
        pieces.retain(|p| p.kind != BlockKind::Text || !p.content.is_empty());
        Ok(pieces)
    }

    fn push_flow(&mut self, mut pieces: Vec<Block>) {
        if let Some(Segment::Flow(prev)) = self.segments.last_mut() {
            let last = prev.last_mut().expect("flow segments are non-empty");
            let first = pieces.first_mut().expect("checked by caller");
            match (last.kind, first.kind) {
                (BlockKind::InlineFormula, BlockKind::Text) => {
                    first.content.insert_str(0, "\n\n");
                }
                (BlockKind::Text, BlockKind::InlineFormula) => {
                    last.content.push_str("\n\n");
                }
                _ => {}
            }
        }
        self.segments.push(Segment::Flow(pieces));
    }
}

/// Whether a line opens a standalone block when it starts a paragraph line.
fn starts_block(line: &str) -> bool {
    let t = line.trim_start();
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    if (1..=6).contains(&hashes)
        && line[hashes..].starts_with(' ')
        && !line[hashes..].trim().is_empty()
    {
        return true;
    }
    if HEADING_COMMANDS.iter().any(|(p, _)| {
        line.trim_end()
            .strip_prefix(p)
            .is_some_and(|body| matching_brace(body) == Some(body.len() - 1))
    }) {
        return true;
    }
    t.starts_with("$$")
        || t.starts_with("\\begin{table}")
        || t.starts_with("\\begin{tabular}")
        || starts_with_tag(t, "table")
        || t.starts_with("<chart>")
        || t.starts_with('|')
}

fn starts_with_tag(s: &str, tag: &str) -> bool {
    s.strip_prefix('<')
        .and_then(|r| r.strip_prefix(tag))
        .is_some_and(|r| r.starts_with('>') || r.starts_with(char::is_whitespace))
}

/// Offset of the first blank line in `s`, or `s.len()`.
fn paragraph_end(s: &str) -> usize {
    let mut offset = 0;
    for line in s.split_inclusive('\n') {
        if offset > 0 && line.trim().is_empty() {
            return offset;
        }
        offset += line.len();
    }
    s.len()
}

/// Finds `needle` in `s`, skipping backslash-escaped characters.
pub(crate) fn find_unescaped(s: &str, needle: &str) -> Option<usize> {
    let mut chars = s.char_indices();
    while let Some((i, c)) = chars.next() {
        if c == '\\' {
            chars.next();
            continue;
        }
        if s[i..].starts_with(needle) {
            return Some(i);
        }
    }
    None
}

/// End offset (exclusive) of an environment opened at the start of `s`,
/// honouring nesting of the same environment.
pub(crate) fn find_env_end(s: &str, open: &str, close: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut i = 0;
    while i < s.len() {
        if s[i..].starts_with(open) {
            depth += 1;
            i += open.len();
        } else if s[i..].starts_with(close) {
            depth -= 1;
            i += close.len();
            if depth == 0 {
                return Some(i);
            }
        } else {
            i += s[i..].chars().next().map_or(1, char::len_utf8);
        }
    }
    None
}

/// Given the text right after an opening `{`, returns the offset of the
/// matching `}`.
pub(crate) fn matching_brace(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 1usize;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 1,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> StructuredDoc {
        parse_doc(s, "d", 1, Domain::Academic).unwrap()
    }

    #[test]
    fn display_formula() {
        let doc = parse("$$E=mc^2$$");
        assert_eq!(doc.blocks, vec![Block::block_formula("E=mc^2")]);
    }

    #[test]
    fn inline_formula_splits_text() {
        let doc = parse("A $x$ B");
        assert_eq!(
            doc.blocks,
            vec![
                Block::text("A "),
                Block::inline_formula("x"),
                Block::text(" B")
            ]
        );
        assert_eq!(serialize_doc(&doc), "A $x$ B");
    }

    #[test]
    fn serialize_simple() {
        let mut doc = parse("x");
        doc.blocks = vec![Block::text("hello")];
        assert_eq!(serialize_doc(&doc), "hello");
        doc.blocks = vec![Block::block_formula("x")];
        assert_eq!(serialize_doc(&doc), "$$x$$");
    }

    #[test]
    fn plain_text_examples() {
        let mut doc = parse("x");
        doc.blocks = vec![Block::text("a"), Block::inline_formula("x")];
        assert_eq!(plain_text_of(&doc), "a\nx");
        doc.blocks.clear();
        assert_eq!(plain_text_of(&doc), "");
    }

    #[test]
    fn latex_section_becomes_heading() {
        let doc = parse("\\section{Intro}\nBody text.");
        assert_eq!(
            doc.blocks,
            vec![Block::heading(1, "Intro"), Block::text("Body text.")]
        );
        assert_eq!(serialize_doc(&doc), "# Intro\n\nBody text.");
        let doc = parse("\\subsection*{Scope}");
        assert_eq!(doc.blocks, vec![Block::heading(2, "Scope")]);
    }

    #[test]
    fn chart_is_not_table() {
        let doc = parse("<chart>\\begin{tabular}{ll}a & b \\\\\n\\end{tabular}</chart>");
        assert_eq!(doc.blocks.len(), 1);
        assert_eq!(doc.blocks[0].kind, BlockKind::Chart);
    }

    #[test]
    fn table_kinds() {
        let doc = parse("\\begin{table}\n\\begin{tabular}{l}\na \\\\\n\\end{tabular}\n\\end{table}\n\n<table><tr><td>a</td></tr></table>\n\n| a | b |\n| --- | --- |\n| 1 | 2 |");
        let kinds: Vec<_> = doc.blocks.iter().map(|b| b.kind).collect();
        assert_eq!(
            kinds,
            vec![
                BlockKind::Table {
                    format: TableFormat::Latex
                },
                BlockKind::Table {
                    format: TableFormat::Html
                },
                BlockKind::Table {
                    format: TableFormat::Markdown
                },
            ]
        );
    }

    #[test]
    fn bare_tabular_gets_table_wrapper() {
        let doc = parse("\\begin{tabular}{l}\na \\\\\n\\end{tabular}");
        assert!(doc.blocks[0].content.starts_with("\\begin{table}"));
        assert!(doc.blocks[0].content.ends_with("\\end{table}"));
        assert_eq!(parse(&serialize_doc(&doc)), doc);
    }

    #[test]
    fn paragraph_break_next_to_inline_formula_survives() {
        let src = "Some text $x$\n\nNext paragraph.\n\n$y$ starts here";
        let doc = parse(src);
        assert_eq!(serialize_doc(&doc), src);
        assert_eq!(parse(&serialize_doc(&doc)), doc);
    }

    #[test]
    fn unbalanced_delimiters_are_reported() {
        let err = parse_doc("ok\n\nA $x B", "d", 1, Domain::Law).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnbalancedDelimiter {
                delimiter: "$",
                line: 3,
                column: 3
            }
        );
        for (src, delim) in [
            ("$$x", "$$"),
            ("\\begin{table}\nx", "\\begin{table}"),
            ("<chart>x", "<chart>"),
            ("<table><tr>", "<table>"),
        ] {
            match parse_doc(src, "d", 1, Domain::Law) {
                Err(ParseError::UnbalancedDelimiter { delimiter, .. }) => {
                    assert_eq!(delimiter, delim)
                }
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn inline_dollar_does_not_cross_paragraphs() {
        assert!(parse_doc("a $x\n\ny$", "d", 1, Domain::Law).is_err());
    }

    #[test]
    fn escaped_dollar_is_text() {
        let doc = parse("costs \\$5 today");
        assert_eq!(doc.blocks, vec![Block::text("costs \\$5 today")]);
    }

    #[test]
    fn empty_document() {
        assert_eq!(
            parse_doc(" \n\n\t", "d", 1, Domain::Law).unwrap_err(),
            ParseError::EmptyDocument
        );
    }

    #[test]
    fn crlf_is_normalised() {
        let doc = parse("# T\r\n\r\nbody");
        assert_eq!(serialize_doc(&doc), "# T\n\nbody");
    }

    #[test]
    fn qa_validation() {
        let mut qa = QaRecord {
            qa_id: "q".into(),
            doc_id: "d".into(),
            page_no: 1,
            question: "?".into(),
            answers: vec!["a".into()],
            evidence: "e".into(),
            evidence_source: EvidenceSource::Txt,
            task: Task::Understanding,
            multipage: true,
            related_pages: vec![],
            answer_format: AnswerFormat::String,
            domain: Domain::Law,
        };
        assert!(matches!(
            qa.validate(),
            Err(QaValidationError::MissingSecondPage(_))
        ));
        qa.related_pages.push(2);
        assert!(qa.validate().is_ok());
        assert_eq!(qa.pages().len(), 2);
    }
}

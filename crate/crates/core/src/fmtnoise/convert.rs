use super::table::locate_tabular;
use crate::docmodel::{matching_brace, Block, BlockKind, TableFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub text: String,
    pub rowspan: usize,
    pub colspan: usize,
}

impl GridCell {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            rowspan: 1,
            colspan: 1,
        }
    }
}

/// One position of the grid: either the top-left corner of a cell or a
/// position covered by the cell anchored at `(row, col)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Anchor(GridCell),
    Covered { row: usize, col: usize },
}

/// A rectangular cell grid; every row has the same width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableGrid {
    pub rows: Vec<Vec<Slot>>,
}

impl TableGrid {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Texts of the anchor cells in row-major order.
    pub fn cell_texts(&self) -> Vec<&str> {
        self.rows
            .iter()
            .flatten()
            .filter_map(|s| match s {
                Slot::Anchor(c) => Some(c.text.as_str()),
                Slot::Covered { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("block is not a table")]
    NotATable,
    #[error("malformed {format:?} table: {reason}")]
    MalformedTable { format: TableFormat, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableWarning {
    /// Markdown cannot merge cells; the text stays in the anchor position and
    /// the covered positions become empty cells.
    MergedCellFlattened { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    pub block: Block,
    pub warnings: Vec<TableWarning>,
}

fn malformed(format: TableFormat, reason: impl Into<String>) -> TableError {
    TableError::MalformedTable {
        format,
        reason: reason.into(),
    }
}

pub fn parse_table(block: &Block) -> Result<TableGrid, TableError> {
    let BlockKind::Table { format } = block.kind else {
        return Err(TableError::NotATable);
    };
    let raw = match format {
        TableFormat::Latex => parse_latex(&block.content)?,
        TableFormat::Markdown => parse_markdown(&block.content)?,
        TableFormat::Html => parse_html(&block.content)?,
    };
    build_grid(raw, format)
}

pub fn render_table(grid: &TableGrid, format: TableFormat) -> Converted {
    let (content, warnings) = match format {
        TableFormat::Latex => (render_latex(grid), Vec::new()),
        TableFormat::Markdown => render_markdown(grid),
        TableFormat::Html => (render_html(grid), Vec::new()),
    };
    Converted {
        block: Block::table(format, content),
        warnings,
    }
}

pub fn convert_table(block: &Block, target: TableFormat) -> Result<Converted, TableError> {
    let grid = parse_table(block)?;
    Ok(render_table(&grid, target))
}

/// A parsed cell before grid placement. `placeholder` marks LaTeX cells that
/// only fill a position covered by a `\multirow` above.
struct RawCell {
    cell: GridCell,
    placeholder: bool,
}

fn build_grid(raw: Vec<Vec<RawCell>>, format: TableFormat) -> Result<TableGrid, TableError> {
    let mut grid: Vec<Vec<Option<Slot>>> = Vec::new();
    for (r, row) in raw.into_iter().enumerate() {
        if grid.len() <= r {
            grid.push(Vec::new());
        }
        let mut c = 0;
        for raw_cell in row {
            let free = |grid: &Vec<Vec<Option<Slot>>>, c: usize| {
                grid[r].get(c).is_none_or(|s| s.is_none())
            };
            if format == TableFormat::Latex {
                // LaTeX repeats covered positions as (usually empty) cells
                if !free(&grid, c) {
                    let width = raw_cell.cell.colspan;
                    if !raw_cell.placeholder && !raw_cell.cell.text.is_empty() {
                        return Err(malformed(
                            format,
                            format!("row {r} writes into a merged cell"),
                        ));
                    }
                    c += width;
                    continue;
                }
            } else {
                while !free(&grid, c) {
                    c += 1;
                }
            }
            let GridCell {
                rowspan, colspan, ..
            } = raw_cell.cell;
            if rowspan == 0 || colspan == 0 {
                return Err(malformed(format, "zero span"));
            }
            for dr in 0..rowspan {
                while grid.len() <= r + dr {
                    grid.push(Vec::new());
                }
                let target = &mut grid[r + dr];
                if target.len() < c + colspan {
                    target.resize(c + colspan, None);
                }
                for dc in 0..colspan {
                    if (dr, dc) != (0, 0) {
                        if target[c + dc].is_some() {
                            return Err(malformed(format, "overlapping spans"));
                        }
                        target[c + dc] = Some(Slot::Covered { row: r, col: c });
                    }
                }
            }
            grid[r][c] = Some(Slot::Anchor(raw_cell.cell));
            c += colspan;
        }
    }
    let width = grid.iter().map(Vec::len).max().unwrap_or(0);
    if width == 0 {
        return Err(malformed(format, "no cells"));
    }
    let rows = grid
        .into_iter()
        .map(|mut row| {
            row.resize(width, None);
            row.into_iter()
                .map(|s| s.unwrap_or_else(|| Slot::Anchor(GridCell::new(""))))
                .collect()
        })
        .collect();
    Ok(TableGrid { rows })
}

// ---- LaTeX ----

fn parse_latex(src: &str) -> Result<Vec<Vec<RawCell>>, TableError> {
    let fmt = TableFormat::Latex;
    let tab =
        locate_tabular(src).ok_or_else(|| malformed(fmt, "no complete tabular environment"))?;
    let body = &src[tab.body.0..tab.body.1];
    let mut rows = Vec::new();
    let segments = split_top_level(body, "\\\\");
    let last = segments.len() - 1;
    for (i, raw) in segments.into_iter().enumerate() {
        let row = strip_rules(raw);
        // a blank segment between two `\\` is a row of empty cells; after the
        // last one, or holding only rules, it is not a row
        if row.trim().is_empty() && (i == last || !raw.trim().is_empty()) {
            continue;
        }
        let cells = split_top_level(row, "&")
            .into_iter()
            .map(|c| parse_latex_cell(c.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(cells);
    }
    Ok(rows)
}

/// Splits on a separator that is outside braces and math.
fn split_top_level<'a>(s: &'a str, sep: &str) -> Vec<&'a str> {
    let bytes = s.as_bytes();
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut math = false;
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if depth == 0 && !math && bytes[i..].starts_with(sep.as_bytes()) {
            parts.push(&s[start..i]);
            i += sep.len();
            start = i;
            continue;
        }
        match bytes[i] {
            b'\\' => {
                i += 2;
                continue;
            }
            b'{' => depth += 1,
            b'}' => depth = depth.saturating_sub(1),
            b'$' => math = !math,
            _ => {}
        }
        i += 1;
    }
    parts.push(&s[start..]);
    parts
}

fn strip_rules(mut row: &str) -> &str {
    loop {
        let t = row.trim_start();
        if let Some(rest) = t.strip_prefix("\\hline") {
            row = rest;
        } else if let Some(rest) = t.strip_prefix("\\cline{") {
            match matching_brace(rest) {
                Some(c) => row = &rest[c + 1..],
                None => return t,
            }
        } else {
            return t;
        }
    }
}

/// Reads `n` brace groups following a command; returns their contents.
fn groups(s: &str, n: usize) -> Option<(Vec<&str>, &str)> {
    let mut rest = s;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        rest = rest.trim_start();
        let inner = rest.strip_prefix('{')?;
        let close = matching_brace(inner)?;
        out.push(&inner[..close]);
        rest = &inner[close + 1..];
    }
    Some((out, rest))
}

fn parse_latex_cell(s: &str) -> Result<RawCell, TableError> {
    let fmt = TableFormat::Latex;
    let bad = |what: &str| malformed(fmt, format!("bad {what} in `{s}`"));
    if let Some(rest) = s.strip_prefix("\\multicolumn") {
        let (args, tail) = groups(rest, 3).ok_or_else(|| bad("\\multicolumn"))?;
        if !tail.trim().is_empty() {
            return Err(bad("\\multicolumn"));
        }
        let colspan: usize = args[0].trim().parse().map_err(|_| bad("\\multicolumn"))?;
        let mut inner = parse_latex_cell(args[2].trim())?;
        inner.cell.colspan = colspan;
        inner.placeholder = inner.cell.text.is_empty();
        return Ok(inner);
    }
    if let Some(rest) = s.strip_prefix("\\multirow") {
        let (args, tail) = groups(rest, 3).ok_or_else(|| bad("\\multirow"))?;
        if !tail.trim().is_empty() {
            return Err(bad("\\multirow"));
        }
        let rowspan: usize = args[0].trim().parse().map_err(|_| bad("\\multirow"))?;
        let mut inner = parse_latex_cell(args[2].trim())?;
        inner.cell.rowspan = rowspan;
        return Ok(inner);
    }
    Ok(RawCell {
        placeholder: s.is_empty(),
        cell: GridCell::new(s),
    })
}

fn render_latex(grid: &TableGrid) -> String {
    let mut out = format!(
        "\\begin{{table}}\n\\begin{{tabular}}{{{}}}\n",
        "c".repeat(grid.n_cols())
    );
    for (r, row) in grid.rows.iter().enumerate() {
        let mut cells = Vec::new();
        for (c, slot) in row.iter().enumerate() {
            match slot {
                Slot::Anchor(cell) => {
                    let mut text = cell.text.clone();
                    if cell.rowspan > 1 {
                        text = format!("\\multirow{{{}}}{{*}}{{{text}}}", cell.rowspan);
                    }
                    if cell.colspan > 1 {
                        text = format!("\\multicolumn{{{}}}{{c}}{{{text}}}", cell.colspan);
                    }
                    cells.push(text);
                }
                // placeholder under a multirow, once per covered run
                Slot::Covered { row, col } if *row != r && c == *col => {
                    match &grid.rows[*row][*col] {
                        Slot::Anchor(anchor) if anchor.colspan > 1 => {
                            cells.push(format!("\\multicolumn{{{}}}{{c}}{{}}", anchor.colspan));
                        }
                        _ => cells.push(String::new()),
                    }
                }
                Slot::Covered { .. } => {}
            }
        }
        out.push_str(&cells.join(" & "));
        out.push_str(" \\\\\n");
    }
    out.push_str("\\end{tabular}\n\\end{table}");
    out
}

// ---- Markdown ----

fn split_pipe_row(line: &str) -> Vec<String> {
    let t = line.trim();
    let t = t.strip_prefix('|').unwrap_or(t);
    let t = t
        .strip_suffix('|')
        .filter(|s| !s.ends_with('\\'))
        .unwrap_or(t);
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = t.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => cells.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    cells.push(cur.trim().to_string());
    cells
}

fn is_separator_row(cells: &[String]) -> bool {
    !cells.is_empty()
        && cells.iter().all(|c| {
            let c = c.trim_matches(':');
            !c.is_empty() && c.chars().all(|ch| ch == '-')
        })
}

fn parse_markdown(src: &str) -> Result<Vec<Vec<RawCell>>, TableError> {
    let rows: Vec<Vec<RawCell>> = src
        .lines()
        .filter(|l| l.trim_start().starts_with('|'))
        .map(split_pipe_row)
        .filter(|cells| !is_separator_row(cells))
        .map(|cells| {
            cells
                .into_iter()
                .map(|t| RawCell {
                    cell: GridCell::new(t),
                    placeholder: false,
                })
                .collect()
        })
        .collect();
    if rows.is_empty() {
        return Err(malformed(TableFormat::Markdown, "no pipe rows"));
    }
    Ok(rows)
}

fn render_markdown(grid: &TableGrid) -> (String, Vec<TableWarning>) {
    let mut warnings = Vec::new();
    let mut lines = Vec::new();
    for (r, row) in grid.rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, slot)| match slot {
                Slot::Anchor(cell) => {
                    if cell.rowspan > 1 || cell.colspan > 1 {
                        warnings.push(TableWarning::MergedCellFlattened { row: r, col: c });
                    }
                    cell.text.replace('|', "\\|")
                }
                Slot::Covered { .. } => String::new(),
            })
            .collect();
        lines.push(format!("| {} |", cells.join(" | ")));
        if r == 0 {
            lines.push(format!("|{}", " --- |".repeat(row.len())));
        }
    }
    (lines.join("\n"), warnings)
}

// ---- HTML ----

fn decode_entities(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
}

fn encode_entities(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn attr(tag: &str, name: &str) -> Option<usize> {
    let lower = tag.to_ascii_lowercase();
    let at = lower.find(&format!("{name}="))?;
    let v = &tag[at + name.len() + 1..];
    let v = v.trim_start_matches(['"', '\'']);
    let digits: String = v.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

fn parse_html(src: &str) -> Result<Vec<Vec<RawCell>>, TableError> {
    let fmt = TableFormat::Html;
    let lower = src.to_ascii_lowercase();
    if !lower.contains("<table") {
        return Err(malformed(fmt, "no <table> element"));
    }
    let mut rows = Vec::new();
    let mut pos = 0;
    while let Some(tr) = lower[pos..].find("<tr") {
        let row_start = pos + tr;
        let row_end = lower[row_start..]
            .find("</tr>")
            .map(|e| row_start + e)
            .ok_or_else(|| malformed(fmt, "unclosed <tr>"))?;
        let mut cells = Vec::new();
        let mut p = row_start + 3;
        loop {
            let next_td = lower[p..row_end].find("<td").map(|x| (x, "</td>"));
            let next_th = lower[p..row_end].find("<th").map(|x| (x, "</th>"));
            let (off, close) = match (next_td, next_th) {
                (Some(a), Some(b)) => {
                    if a.0 < b.0 {
                        a
                    } else {
                        b
                    }
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => break,
            };
            let open_start = p + off;
            let open_end = lower[open_start..]
                .find('>')
                .map(|e| open_start + e + 1)
                .ok_or_else(|| malformed(fmt, "unterminated cell tag"))?;
            let content_end = lower[open_end..row_end]
                .find(close)
                .map(|e| open_end + e)
                .ok_or_else(|| malformed(fmt, format!("missing {close}")))?;
            let tag = &src[open_start..open_end];
            cells.push(RawCell {
                cell: GridCell {
                    text: decode_entities(src[open_end..content_end].trim()),
                    rowspan: attr(tag, "rowspan").unwrap_or(1),
                    colspan: attr(tag, "colspan").unwrap_or(1),
                },
                placeholder: false,
            });
            p = content_end + close.len();
        }
        rows.push(cells);
        pos = row_end + "</tr>".len();
    }
    if rows.is_empty() {
        return Err(malformed(fmt, "no rows"));
    }
    Ok(rows)
}

fn render_html(grid: &TableGrid) -> String {
    let mut out = String::from("<table>\n");
    for row in &grid.rows {
        out.push_str("<tr>");
        for slot in row {
            if let Slot::Anchor(cell) = slot {
                out.push_str("<td");
                if cell.rowspan > 1 {
                    out.push_str(&format!(" rowspan=\"{}\"", cell.rowspan));
                }
                if cell.colspan > 1 {
                    out.push_str(&format!(" colspan=\"{}\"", cell.colspan));
                }
                out.push('>');
                out.push_str(&encode_entities(&cell.text));
                out.push_str("</td>");
            }
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latex(body: &str, spec: &str) -> Block {
        Block::table(
            TableFormat::Latex,
            format!("\\begin{{table}}\n\\begin{{tabular}}{{{spec}}}\n{body}\n\\end{{tabular}}\n\\end{{table}}"),
        )
    }

    #[test]
    fn two_by_two_to_markdown() {
        let b = latex("a & b \\\\\nc & d \\\\", "ll");
        let out = convert_table(&b, TableFormat::Markdown).unwrap();
        assert_eq!(out.block.content, "| a | b |\n| --- | --- |\n| c | d |");
        assert!(out.warnings.is_empty());
        let grid = parse_table(&out.block).unwrap();
        assert_eq!(grid.cell_texts(), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn multicolumn_to_html_colspan() {
        let b = latex("\\multicolumn{2}{c}{Total} \\\\\nx & y \\\\", "ll");
        let out = convert_table(&b, TableFormat::Html).unwrap();
        assert!(out.block.content.contains("<td colspan=\"2\">Total</td>"));
        assert_eq!(parse_table(&out.block).unwrap(), parse_table(&b).unwrap());
    }

    #[test]
    fn multicolumn_to_markdown_flattens_with_warning() {
        let b = latex("\\multicolumn{2}{c}{Total} \\\\\nx & y \\\\", "ll");
        let out = convert_table(&b, TableFormat::Markdown).unwrap();
        assert_eq!(out.block.content, "| Total |  |\n| --- | --- |\n| x | y |");
        assert_eq!(
            out.warnings,
            vec![TableWarning::MergedCellFlattened { row: 0, col: 0 }]
        );
        let g = parse_table(&out.block).unwrap();
        assert_eq!((g.n_rows(), g.n_cols()), (2, 2));
    }

    #[test]
    fn multirow_round_trips_through_html() {
        let b = latex("\\multirow{2}{*}{A} & b \\\\\n & c \\\\\nd & e \\\\", "ll");
        let grid = parse_table(&b).unwrap();
        assert_eq!(grid.rows[1][0], Slot::Covered { row: 0, col: 0 });
        let html = render_table(&grid, TableFormat::Html).block;
        assert_eq!(parse_table(&html).unwrap(), grid);
        let back = render_table(&parse_table(&html).unwrap(), TableFormat::Latex).block;
        assert_eq!(parse_table(&back).unwrap(), grid);
    }

    #[test]
    fn html_entities_and_headers() {
        let b = Block::table(
            TableFormat::Html,
            "<table><tr><th>a &amp; b</th><th>c</th></tr><tr><td>1 &lt; 2</td><td>x</td></tr></table>",
        );
        let g = parse_table(&b).unwrap();
        assert_eq!(g.cell_texts(), vec!["a & b", "c", "1 < 2", "x"]);
        let again = render_table(&g, TableFormat::Html).block;
        assert!(again.content.contains("a &amp; b"));
        assert_eq!(parse_table(&again).unwrap(), g);
    }

    #[test]
    fn malformed_inputs_error() {
        let b = Block::table(TableFormat::Latex, "\\begin{tabular}{ll} a & b");
        assert!(matches!(
            parse_table(&b),
            Err(TableError::MalformedTable { .. })
        ));
        assert_eq!(parse_table(&Block::text("x")), Err(TableError::NotATable));
    }
}

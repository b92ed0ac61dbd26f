use super::formula::{swap_symbols, MarkerDraws};
use super::{FmtPlan, FmtRule, PerturbStats, PerturbWarning, Perturbed};
use crate::docmodel::{matching_brace, BlockKind, StructuredDoc, TableFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BEGIN: &str = "\\begin{tabular}";
const END: &str = "\\end{tabular}";

pub(super) fn perturb(doc: &StructuredDoc, plan: &FmtPlan) -> Perturbed {
    let mut line_rng = plan.rng(doc, FmtRule::TableLines);
    let mut cell_rng = plan.rng(doc, FmtRule::TableCellContent);
    let mut stats = PerturbStats::default();
    let mut warnings = Vec::new();
    let mut blocks = doc.blocks.clone();
    for (i, block) in blocks.iter_mut().enumerate() {
        if block.kind
            != (BlockKind::Table {
                format: TableFormat::Latex,
            })
        {
            continue;
        }
        match perturb_tabular(
            &block.content,
            plan,
            &mut line_rng,
            &mut cell_rng,
            &mut stats,
        ) {
            Some(out) => block.content = out,
            None => {
                log::warn!("{}: block {i} is not a well-formed tabular", doc.key());
                warnings.push(PerturbWarning::MalformedTable { block: i });
            }
        }
    }
    Perturbed {
        doc: StructuredDoc {
            blocks,
            ..doc.clone()
        },
        stats,
        warnings,
    }
}

/// Byte layout of one `tabular` environment.
pub(crate) struct Tabular {
    /// Span of the column spec, without braces.
    pub spec: (usize, usize),
    /// Span of the body between the spec's `}` and `\end{tabular}`.
    pub body: (usize, usize),
}

pub(crate) fn locate_tabular(src: &str) -> Option<Tabular> {
    let begin = src.find(BEGIN)?;
    let mut i = begin + BEGIN.len();
    let rest = &src[i..];
    let skipped = rest.len() - rest.trim_start().len();
    i += skipped;
    if src[i..].starts_with('[') {
        i += src[i..].find(']')? + 1;
    }
    if !src[i..].starts_with('{') {
        return None;
    }
    let close = i + 1 + matching_brace(&src[i + 1..])?;
    let end = close + src[close..].find(END)?;
    Some(Tabular {
        spec: (i + 1, close),
        body: (close + 1, end),
    })
}

/// Offsets inside `spec` where a column boundary sits, plus the column count.
pub(crate) fn column_boundaries(spec: &str) -> (Vec<usize>, usize) {
    let bytes = spec.as_bytes();
    let mut bounds = Vec::new();
    let mut cols = 0;
    let mut i = 0;
    let skip_group = |j: usize| -> usize {
        if bytes.get(j) == Some(&b'{') {
            matching_brace(&spec[j + 1..]).map_or(spec.len(), |c| j + 1 + c + 1)
        } else {
            j
        }
    };
    while i < bytes.len() {
        match bytes[i] {
            b'>' | b'<' | b'@' | b'!' => {
                if bytes[i] == b'>' {
                    bounds.push(i);
                }
                i = skip_group(i + 1);
            }
            b'p' | b'm' | b'b' => {
                if bounds.last() != Some(&i) && !prefixed(bytes, i) {
                    bounds.push(i);
                }
                cols += 1;
                i = skip_group(i + 1);
            }
            b'*' => {
                bounds.push(i);
                let after_count = skip_group(i + 1);
                let (_, inner) = column_boundaries(
                    spec.get(after_count + 1..skip_group(after_count).saturating_sub(1))
                        .unwrap_or(""),
                );
                let repeat: usize = spec
                    .get(i + 2..after_count.saturating_sub(1))
                    .and_then(|n| n.trim().parse().ok())
                    .unwrap_or(1);
                cols += inner * repeat;
                i = skip_group(after_count);
            }
            c if c.is_ascii_alphabetic() => {
                if !prefixed(bytes, i) {
                    bounds.push(i);
                }
                cols += 1;
                i += 1;
            }
            _ => i += 1,
        }
    }
    bounds.push(spec.len());
    (bounds, cols.max(1))
}

/// Whether the column letter at `i` follows a `>{…}` prefix.
fn prefixed(bytes: &[u8], i: usize) -> bool {
    i > 0 && bytes[i - 1] == b'}' && {
        let mut depth = 0i32;
        let mut j = i;
        while j > 0 {
            j -= 1;
            match bytes[j] {
                b'}' => depth += 1,
                b'{' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
        }
        j > 0 && bytes[j - 1] == b'>'
    }
}

/// Splits a tabular body into row separators (`\\` end offsets) and cell
/// spans, all relative to `body`. Only top-level separators count.
pub(crate) fn body_layout(body: &str) -> (Vec<usize>, Vec<(usize, usize)>) {
    let bytes = body.as_bytes();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut depth = 0usize;
    let mut in_math = false;
    let mut cell_start = 0;
    let mut i = 0;
    let push_cell = |from: usize, to: usize, cells: &mut Vec<(usize, usize)>| {
        let s = &body[from..to];
        let lead = s.len() - s.trim_start().len();
        let trimmed = s.trim();
        if !trimmed.is_empty() {
            cells.push((from + lead, from + lead + trimmed.len()));
        }
    };
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if bytes.get(i + 1) == Some(&b'\\') && depth == 0 && !in_math => {
                push_cell(cell_start, i, &mut cells);
                i += 2;
                rows.push(i);
                cell_start = i;
                continue;
            }
            b'\\' => {
                i += 2;
                continue;
            }
            b'{' => depth += 1,
            b'}' => depth = depth.saturating_sub(1),
            b'$' => in_math = !in_math,
            b'&' if depth == 0 && !in_math => {
                push_cell(cell_start, i, &mut cells);
                cell_start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    push_cell(cell_start, bytes.len(), &mut cells);
    (rows, cells)
}

/// Strips row-rule commands off the front of a cell span so that only the
/// content itself is targeted.
fn cell_target(body: &str, span: (usize, usize)) -> (usize, usize) {
    let (mut start, end) = span;
    loop {
        let s = &body[start..end];
        let skip = if s.starts_with("\\hline") {
            "\\hline".len()
        } else if let Some(rest) = s.strip_prefix("\\cline{") {
            match matching_brace(rest) {
                Some(c) => "\\cline{".len() + c + 1,
                None => break,
            }
        } else {
            break;
        };
        let rest = &s[skip..];
        start += skip + (rest.len() - rest.trim_start().len());
    }
    let s = &body[start..end];
    for cmd in ["\\multicolumn", "\\multirow"] {
        if s.starts_with(cmd) {
            if let Some(inner) = last_group(s) {
                return (start + inner.0, start + inner.1);
            }
        }
    }
    (start, end)
}

/// Span (without braces) of the final brace group, if `s` ends with one.
fn last_group(s: &str) -> Option<(usize, usize)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    let mut last = None;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 1,
            b'{' => {
                let close = i + 1 + matching_brace(&s[i + 1..])?;
                last = Some((i + 1, close));
                i = close;
            }
            _ => {}
        }
        i += 1;
    }
    last.filter(|&(_, close)| close + 1 == s.len())
}

const WRAPS: [(&str, &str); 3] = [
    ("\\textbf{", "}"),
    ("\\textit{", "}"),
    ("\\underline{", "}"),
];

fn perturb_tabular(
    src: &str,
    plan: &FmtPlan,
    line_rng: &mut ChaCha8Rng,
    cell_rng: &mut ChaCha8Rng,
    stats: &mut PerturbStats,
) -> Option<String> {
    let tab = locate_tabular(src)?;
    let spec = &src[tab.spec.0..tab.spec.1];
    let body = &src[tab.body.0..tab.body.1];
    let (bounds, cols) = column_boundaries(spec);
    let (rows, cells) = body_layout(body);
    let rate = plan.rate;
    let lines_on = plan.enabled(FmtRule::TableLines);

    // (position in src, order key, replaced length, text)
    let mut edits: Vec<(usize, u8, usize, String)> = Vec::new();

    for &b in &bounds {
        let u: f64 = line_rng.random();
        if lines_on && u < rate {
            edits.push((tab.spec.0 + b, 0, 0, "|".to_string()));
            stats.table_lines += 1;
        }
    }

    let row_starts = std::iter::once(tab.body.0).chain(rows.iter().map(|&r| tab.body.0 + r));
    for pos in row_starts {
        let u: f64 = line_rng.random();
        let hline: bool = line_rng.random();
        let a = line_rng.random_range(1..=cols);
        let b = line_rng.random_range(1..=cols);
        if lines_on && u < rate {
            let rule = if hline {
                " \\hline ".to_string()
            } else {
                format!(" \\cline{{{}-{}}} ", a.min(b), a.max(b))
            };
            edits.push((pos, 0, 0, rule));
            stats.table_lines += 1;
        }
    }

    for &span in &cells {
        let u: f64 = cell_rng.random();
        let style = cell_rng.random_range(0..WRAPS.len());
        let markers = MarkerDraws::draw(cell_rng);
        // own stream so the number of symbol draws never shifts later cells
        let mut sym_rng = ChaCha8Rng::seed_from_u64(cell_rng.random());
        if !plan.enabled(FmtRule::TableCellContent) || u >= rate {
            continue;
        }
        let (start, end) = cell_target(body, span);
        let cell = &body[start..end];
        if cell.is_empty() {
            continue;
        }
        let at = tab.body.0 + start;
        if let Some(open) = cell.find('$') {
            let Some(len) = cell[open + 1..].find('$') else {
                continue;
            };
            let formula = &cell[open + 1..open + 1 + len];
            let swapped = swap_symbols(formula, 1.0, &mut sym_rng, stats);
            let marked = markers.apply(&swapped).map_or(swapped, |(m, _)| m);
            edits.push((at + open + 1, 1, formula.len(), marked));
            stats.perturbed_cells += 1;
        } else if !cell.contains(['{', '}', '\\', '$', '*', '_']) {
            let (open, close) = WRAPS[style];
            edits.push((at, 1, cell.len(), format!("{open}{cell}{close}")));
            stats.perturbed_cells += 1;
        }
    }

    edits.sort_by_key(|e| (e.0, e.1));
    let mut out = String::with_capacity(src.len() + 16 * edits.len());
    let mut cursor = 0;
    for (pos, _, len, text) in edits {
        out.push_str(&src[cursor..pos]);
        out.push_str(&text);
        cursor = pos + len;
    }
    out.push_str(&src[cursor..]);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{Block, Domain};

    const TABLE: &str = "\\begin{table}\n\\begin{tabular}{lcr}\nName & Score & Rank \\\\\nAda & 91 & 1 \\\\\n\\multicolumn{2}{c}{Total} & $x+y$ \\\\\n\\end{tabular}\n\\end{table}";

    fn doc() -> StructuredDoc {
        StructuredDoc {
            doc_id: "t".into(),
            page_no: 1,
            domain: Domain::Finance,
            blocks: vec![Block::table(TableFormat::Latex, TABLE)],
        }
    }

    #[test]
    fn spec_boundaries_and_columns() {
        assert_eq!(column_boundaries("lcr"), (vec![0, 1, 2, 3], 3));
        assert_eq!(column_boundaries("|l|c|"), (vec![1, 3, 5], 2));
        assert_eq!(column_boundaries("p{2cm}r"), (vec![0, 6, 7], 2));
        assert_eq!(column_boundaries("*{3}{c}").1, 3);
    }

    #[test]
    fn layout_finds_rows_and_cells() {
        let tab = locate_tabular(TABLE).unwrap();
        let body = &TABLE[tab.body.0..tab.body.1];
        let (rows, cells) = body_layout(body);
        assert_eq!(rows.len(), 3);
        let texts: Vec<&str> = cells.iter().map(|&(a, b)| &body[a..b]).collect();
        assert_eq!(
            texts,
            vec![
                "Name",
                "Score",
                "Rank",
                "Ada",
                "91",
                "1",
                "\\multicolumn{2}{c}{Total}",
                "$x+y$"
            ]
        );
        assert_eq!(cell_target(body, cells[6]), {
            let s = body.find("Total").unwrap();
            (s, s + 5)
        });
    }

    #[test]
    fn full_rate_adds_lines_and_cell_edits() {
        let p = perturb(&doc(), &FmtPlan::new(1.0, 1));
        let out = &p.doc.blocks[0].content;
        assert_eq!(p.stats.table_lines, 4 + 4);
        assert_eq!(p.stats.perturbed_cells, 8);
        assert!(out.contains("\\begin{tabular}{|l|c|r|}"), "{out}");
        assert!(out.contains("{Total}}"), "{out}");
    }

    #[test]
    fn zero_rate_leaves_table_alone() {
        let p = perturb(&doc(), &FmtPlan::new(0.0, 1));
        assert_eq!(p.doc, doc());
    }

    #[test]
    fn broken_tabular_warns() {
        let mut d = doc();
        d.blocks[0].content = "\\begin{table}\\begin{tabular}{lc} a & b \\end{table}".into();
        let p = perturb(&d, &FmtPlan::new(1.0, 1));
        assert_eq!(
            p.warnings,
            vec![PerturbWarning::MalformedTable { block: 0 }]
        );
        assert_eq!(p.doc, d);
    }
}

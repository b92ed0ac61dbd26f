use super::symbols::command_for;
use crate::docmodel::{matching_brace, serialize_doc, StructuredDoc};

/// Commands whose braces are removed, keeping the argument.
const UNWRAP: [&str; 13] = [
    "textbf",
    "textit",
    "underline",
    "mathbf",
    "boldsymbol",
    "mathbb",
    "pmb",
    "mathrsfs",
    "euscript",
    "mathcal",
    "section",
    "subsection",
    "subsubsection",
];

/// Spacing and rule commands dropped together with an empty `{}` terminator.
const DROP: [&str; 3] = ["quad", "qquad", "hline"];

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes styling wrappers, spacing markers, table rules, heading marks and
/// math delimiters from the serialized page, and maps Unicode symbols back to
/// their commands. The result is whitespace-normalized.
pub fn strip_formatting(doc: &StructuredDoc) -> String {
    strip_formatting_text(&serialize_doc(doc))
}

fn is_boundary(c: Option<char>) -> bool {
    match c {
        None => true,
        Some(c) => {
            c.is_whitespace()
                || matches!(
                    c,
                    '$' | '&'
                        | '{'
                        | '}'
                        | '\\'
                        | '('
                        | ')'
                        | '['
                        | ']'
                        | '.'
                        | ','
                        | ';'
                        | ':'
                        | '!'
                        | '?'
                        | '"'
                        | '\''
                        | '<'
                        | '>'
                        | '|'
                )
        }
    }
}

/// Text form of [`strip_formatting`] for arbitrary OCR output.
pub fn strip_formatting_text(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    // true for braces opened by an unwrapped command
    let mut braces: Vec<bool> = Vec::new();
    let mut math = false;
    let mut i = 0;
    while i < src.len() {
        let rest = &src[i..];
        let c = rest.chars().next().unwrap();
        let prev = src[..i].chars().next_back();
        let line_start = prev.is_none_or(|p| p == '\n');

        if line_start && !math && c == '#' {
            let hashes = rest.bytes().take_while(|&b| b == b'#').count();
            if hashes <= 6 && rest[hashes..].starts_with(' ') {
                i += hashes + 1;
                continue;
            }
        }

        match c {
            '\\' => {
                let name_len = rest[1..]
                    .bytes()
                    .take_while(|b| b.is_ascii_alphabetic())
                    .count();
                if name_len == 0 {
                    match rest[1..].chars().next() {
                        Some(',' | ';' | ':') => i += 2,
                        Some(n) => {
                            out.push('\\');
                            out.push(n);
                            i += 1 + n.len_utf8();
                        }
                        None => {
                            out.push('\\');
                            i += 1;
                        }
                    }
                    continue;
                }
                let name = &rest[1..1 + name_len];
                let mut after = i + 1 + name_len;
                if UNWRAP.contains(&name) {
                    if name.contains("section") && src[after..].starts_with('*') {
                        after += 1;
                    }
                    if src[after..].starts_with('{') {
                        braces.push(true);
                        i = after + 1;
                        continue;
                    }
                } else if DROP.contains(&name) {
                    i = after + if src[after..].starts_with("{}") { 2 } else { 0 };
                    continue;
                } else if name == "cline" && src[after..].starts_with('{') {
                    if let Some(close) = matching_brace(&src[after + 1..]) {
                        i = after + 1 + close + 1;
                        continue;
                    }
                } else if name == "begin" && src[after..].starts_with("{tabular}") {
                    out.push_str("\\begin{tabular}");
                    i = after + "{tabular}".len();
                    i = copy_column_spec(src, i, &mut out);
                    continue;
                }
                out.push_str(&src[i..after]);
                i = after;
            }
            '{' => {
                braces.push(false);
                out.push('{');
                i += 1;
            }
            '}' => {
                if !braces.pop().unwrap_or(false) {
                    out.push('}');
                }
                i += 1;
            }
            '$' => {
                math = !math;
                out.push(' ');
                i += if rest.starts_with("$$") { 2 } else { 1 };
            }
            '<' if rest.starts_with("<chart>") => {
                out.push(' ');
                i += "<chart>".len();
            }
            '<' if rest.starts_with("</chart>") => {
                out.push(' ');
                i += "</chart>".len();
            }
            '*' | '_' if !math => {
                let run = rest.bytes().take_while(|&b| b == c as u8).count();
                let next = src[i + run..].chars().next();
                let opening = is_boundary(prev) && next.is_some_and(|n| !n.is_whitespace());
                let closing = prev.is_some_and(|p| !p.is_whitespace()) && is_boundary(next);
                if !(opening || closing) {
                    out.push_str(&rest[..run]);
                }
                i += run;
            }
            _ => {
                match command_for(c) {
                    Some(name) => {
                        out.push('\\');
                        out.push_str(name);
                    }
                    None => out.push(c),
                }
                i += c.len_utf8();
            }
        }
    }
    normalize_whitespace(&out)
}

/// Copies an optional `[pos]` and the `{spec}` of a tabular, dropping `|`.
fn copy_column_spec(src: &str, mut i: usize, out: &mut String) -> usize {
    if src[i..].starts_with('[') {
        if let Some(end) = src[i..].find(']') {
            out.push_str(&src[i..i + end + 1]);
            i += end + 1;
        }
    }
    if src[i..].starts_with('{') {
        if let Some(close) = matching_brace(&src[i + 1..]) {
            let spec = &src[i..i + 1 + close + 1];
            out.extend(spec.chars().filter(|&c| c != '|'));
            return i + 1 + close + 1;
        }
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unwraps_styles_and_sections() {
        assert_eq!(
            strip_formatting_text("\\textbf{alpha beta} *gamma* __delta__"),
            "alpha beta gamma delta"
        );
        assert_eq!(
            strip_formatting_text("\\subsection{Intro.}\n\nBody"),
            "Intro. Body"
        );
        assert_eq!(strip_formatting_text("## Title.\n\nBody"), "Title. Body");
    }

    #[test]
    fn keeps_literal_underscores_and_stars() {
        assert_eq!(
            strip_formatting_text("snake_case and 2*3"),
            "snake_case and 2*3"
        );
        assert_eq!(strip_formatting_text("$x_{i}^{*}$"), "x_{i}^{*}");
    }

    #[test]
    fn drops_markers_and_maps_symbols() {
        assert_eq!(strip_formatting_text("$$a\\quad+\\,b\\;σ$$"), "a+b\\sigma");
        assert_eq!(strip_formatting_text("\\mathbf{x}\\quad y"), "x y");
        assert_eq!(strip_formatting_text("**bold** _u_"), "bold u");
        assert_eq!(strip_formatting_text("$\\boldsymbol{v}$"), "v");
    }

    #[test]
    fn drops_table_rules() {
        let src =
            "\\begin{tabular}{|l|c|} \\hline a & \\textit{b} \\\\ \\cline{1-2} \\end{tabular}";
        assert_eq!(
            strip_formatting_text(src),
            "\\begin{tabular}{lc} a & b \\\\ \\end{tabular}"
        );
    }

    #[test]
    fn keeps_escapes_and_line_breaks() {
        assert_eq!(
            strip_formatting_text("cost \\$5 \\{x\\}"),
            "cost \\$5 \\{x\\}"
        );
        assert_eq!(strip_formatting_text("a\\\\b"), "a\\\\b");
    }
}

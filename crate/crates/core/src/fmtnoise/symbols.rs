//! Equivalent-symbol tables and a minimal LaTeX tokenizer for formulas.

/// Bold font commands that render the same glyphs.
pub const BOLD_CLASS: [&str; 2] = ["mathbf", "boldsymbol"];

/// Script/blackboard font commands treated as interchangeable.
pub const CURSIVE_CLASS: [&str; 5] = ["mathbb", "pmb", "mathrsfs", "euscript", "mathcal"];

/// Markers inserted into formula gaps.
pub const MARKERS: [&str; 5] = ["\\,", "\\quad", "\\qquad", "\\;", "\\:"];

/// LaTeX command name to Unicode character. A fixed subset of the W3C
/// entity list: Greek letters plus common operators and relations.
pub const UNICODE_PAIRS: [(&str, char); 56] = [
    ("alpha", 'α'),
    ("beta", 'β'),
    ("gamma", 'γ'),
    ("delta", 'δ'),
    ("epsilon", 'ϵ'),
    ("varepsilon", 'ε'),
    ("zeta", 'ζ'),
    ("eta", 'η'),
    ("theta", 'θ'),
    ("vartheta", 'ϑ'),
    ("iota", 'ι'),
    ("kappa", 'κ'),
    ("lambda", 'λ'),
    ("mu", 'μ'),
    ("nu", 'ν'),
    ("xi", 'ξ'),
    ("pi", 'π'),
    ("rho", 'ρ'),
    ("sigma", 'σ'),
    ("tau", 'τ'),
    ("upsilon", 'υ'),
    ("phi", 'ϕ'),
    ("varphi", 'φ'),
    ("chi", 'χ'),
    ("psi", 'ψ'),
    ("omega", 'ω'),
    ("Gamma", 'Γ'),
    ("Delta", 'Δ'),
    ("Theta", 'Θ'),
    ("Lambda", 'Λ'),
    ("Xi", 'Ξ'),
    ("Pi", 'Π'),
    ("Sigma", 'Σ'),
    ("Upsilon", 'Υ'),
    ("Phi", 'Φ'),
    ("Psi", 'Ψ'),
    ("Omega", 'Ω'),
    ("infty", '∞'),
    ("pm", '±'),
    ("times", '×'),
    ("div", '÷'),
    ("cdot", '⋅'),
    ("leq", '≤'),
    ("geq", '≥'),
    ("neq", '≠'),
    ("approx", '≈'),
    ("sum", '∑'),
    ("prod", '∏'),
    ("int", '∫'),
    ("partial", '∂'),
    ("nabla", '∇'),
    ("rightarrow", '→'),
    ("leftarrow", '←'),
    ("in", '∈'),
    ("forall", '∀'),
    ("exists", '∃'),
];

pub fn unicode_for(name: &str) -> Option<char> {
    UNICODE_PAIRS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, c)| c)
}

pub fn command_for(c: char) -> Option<&'static str> {
    UNICODE_PAIRS
        .iter()
        .find(|&&(_, u)| u == c)
        .map(|&(n, _)| n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    /// `\name`
    Word,
    /// `\` followed by one non-letter
    Symbol,
    /// a balanced `{…}` group
    Group,
    Char,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tok {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnbalancedBraces;

/// Splits formula source into top-level tokens. Whitespace is skipped.
pub fn tokenize_formula(src: &str) -> Result<Vec<Tok>, UnbalancedBraces> {
    let mut toks = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let start = i;
        let kind = match c {
            '\\' => {
                let name_len = src[i + 1..]
                    .bytes()
                    .take_while(|b| b.is_ascii_alphabetic())
                    .count();
                if name_len > 0 {
                    i += 1 + name_len;
                    TokKind::Word
                } else {
                    i += 1;
                    if let Some(n) = src[i..].chars().next() {
                        i += n.len_utf8();
                    }
                    TokKind::Symbol
                }
            }
            '{' => {
                let close =
                    crate::docmodel::matching_brace(&src[i + 1..]).ok_or(UnbalancedBraces)?;
                i += 1 + close + 1;
                TokKind::Group
            }
            '}' => return Err(UnbalancedBraces),
            _ => {
                i += c.len_utf8();
                TokKind::Char
            }
        };
        toks.push(Tok {
            kind,
            start,
            end: i,
        });
    }
    Ok(toks)
}

/// All control words in `src` (at any nesting depth) as `(start, end)` byte
/// spans covering the backslash and the name.
pub fn control_words(src: &str) -> Vec<(usize, usize)> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_alphabetic())
                .count();
            if name_len > 0 {
                out.push((i, i + 1 + name_len));
                i += 1 + name_len;
            } else {
                i += 2;
            }
        } else {
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_commands_groups_and_chars() {
        let src = "\\frac{a}{b} + \\,x^2";
        let toks = tokenize_formula(src).unwrap();
        let texts: Vec<_> = toks.iter().map(|t| &src[t.start..t.end]).collect();
        assert_eq!(
            texts,
            vec!["\\frac", "{a}", "{b}", "+", "\\,", "x", "^", "2"]
        );
        assert_eq!(toks[0].kind, TokKind::Word);
        assert_eq!(toks[1].kind, TokKind::Group);
        assert_eq!(toks[4].kind, TokKind::Symbol);
    }

    #[test]
    fn tokenizer_rejects_unbalanced() {
        assert!(tokenize_formula("{a").is_err());
        assert!(tokenize_formula("a}").is_err());
    }

    #[test]
    fn unicode_table_is_one_to_one() {
        for (i, (n, c)) in UNICODE_PAIRS.iter().enumerate() {
            for (m, d) in &UNICODE_PAIRS[i + 1..] {
                assert_ne!(n, m);
                assert_ne!(c, d);
            }
        }
        assert_eq!(unicode_for("Sigma"), Some('\u{03A3}'));
        assert_eq!(command_for('σ'), Some("sigma"));
    }
}

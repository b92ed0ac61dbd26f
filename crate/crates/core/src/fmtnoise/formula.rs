use super::symbols::{
    control_words, tokenize_formula, unicode_for, Tok, TokKind, BOLD_CLASS, CURSIVE_CLASS, MARKERS,
};
use super::{FmtPlan, FmtRule, PerturbStats, PerturbWarning, Perturbed};
use crate::docmodel::{BlockKind, StructuredDoc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Commands whose following gap belongs to them: a marker there would change
/// what they apply to.
const BINDING_COMMANDS: [&str; 22] = [
    "left",
    "right",
    "big",
    "Big",
    "bigg",
    "Bigg",
    "bigl",
    "bigr",
    "Bigl",
    "Bigr",
    "biggl",
    "biggr",
    "begin",
    "end",
    "mathrm",
    "text",
    "textrm",
    "operatorname",
    "frac",
    "sqrt",
    "hat",
    "bar",
];

const MAX_MARKERS: usize = 5;

pub(super) fn perturb(doc: &StructuredDoc, plan: &FmtPlan) -> Perturbed {
    let mut conv_rng = plan.rng(doc, FmtRule::FormulaConversion);
    let mut marker_rng = plan.rng(doc, FmtRule::ExtraneousElements);
    let mut sym_rng = plan.rng(doc, FmtRule::EquivalentSymbols);
    let mut stats = PerturbStats::default();
    let mut warnings = Vec::new();
    let mut blocks = doc.blocks.clone();

    for i in 0..blocks.len() {
        let kind = blocks[i].kind;
        if !matches!(kind, BlockKind::InlineFormula | BlockKind::BlockFormula) {
            continue;
        }
        if tokenize_formula(&blocks[i].content).is_err() {
            log::warn!(
                "{}: block {i} has unbalanced braces, left unchanged",
                doc.key()
            );
            warnings.push(PerturbWarning::MalformedFormula { block: i });
            continue;
        }

        let convert = conv_rng.random::<f64>() < plan.rate;

        let threshold = if plan.enabled(FmtRule::EquivalentSymbols) {
            plan.rate
        } else {
            0.0
        };
        let swapped = swap_symbols(&blocks[i].content, threshold, &mut sym_rng, &mut stats);
        let marked = insert_markers(&swapped, plan, &mut marker_rng, &mut stats);
        blocks[i].content = marked;

        if plan.enabled(FmtRule::FormulaConversion) && convert {
            match kind {
                BlockKind::InlineFormula => {
                    blocks[i].kind = BlockKind::BlockFormula;
                    stats.converted_formulas += 1;
                }
                BlockKind::BlockFormula if !blocks[i].content.contains("\n\n") => {
                    blocks[i].kind = BlockKind::InlineFormula;
                    stats.converted_formulas += 1;
                    // keep words from gluing onto the now-inline formula
                    if let Some(prev) = i.checked_sub(1).map(|j| &mut blocks[j]) {
                        if prev.kind == BlockKind::Text
                            && !prev.content.ends_with(char::is_whitespace)
                        {
                            prev.content.push(' ');
                        }
                    }
                    if let Some(next) = blocks.get_mut(i + 1) {
                        if next.kind == BlockKind::Text
                            && !next.content.starts_with(char::is_whitespace)
                        {
                            next.content.insert(0, ' ');
                        }
                    }
                }
                _ => {}
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

/// Swaps each control word that has an equivalent when its draw falls below
/// `threshold`. One draw per control word, whether or not it has an
/// equivalent.
pub(super) fn swap_symbols(
    src: &str,
    threshold: f64,
    rng: &mut ChaCha8Rng,
    stats: &mut PerturbStats,
) -> String {
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0;
    for (start, end) in control_words(src) {
        let u: f64 = rng.random();
        let pick = rng.random_range(0..CURSIVE_CLASS.len() - 1);
        if u >= threshold {
            continue;
        }
        let name = &src[start + 1..end];
        let replacement = if let Some(k) = BOLD_CLASS.iter().position(|&n| n == name) {
            format!("\\{}", BOLD_CLASS[1 - k])
        } else if let Some(k) = CURSIVE_CLASS.iter().position(|&n| n == name) {
            let others: Vec<&str> = CURSIVE_CLASS
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &n)| n)
                .collect();
            format!("\\{}", others[pick])
        } else if let Some(c) = unicode_for(name) {
            c.to_string()
        } else {
            continue;
        };
        out.push_str(&src[cursor..start]);
        out.push_str(&replacement);
        cursor = end;
        stats.symbol_swaps += 1;
    }
    out.push_str(&src[cursor..]);
    out
}

/// Top-level gaps where a spacing marker leaves the rendering unchanged.
fn marker_gaps(src: &str, toks: &[Tok]) -> Vec<usize> {
    let mut gaps = Vec::new();
    for pair in toks.windows(2) {
        let (prev, cur) = (pair[0], pair[1]);
        let prev_text = &src[prev.start..prev.end];
        let cur_text = &src[cur.start..cur.end];
        let blocked = cur.kind == TokKind::Group
            || matches!(prev_text, "^" | "_")
            || matches!(cur_text, "^" | "_" | "'")
            || (prev.kind == TokKind::Word && BINDING_COMMANDS.contains(&&prev_text[1..]))
            || (prev.kind == TokKind::Word && cur.kind == TokKind::Char && cur_text == "[");
        if !blocked {
            gaps.push(cur.start);
        }
    }
    gaps
}

/// A fixed number of draws describing where markers would go.
pub(super) struct MarkerDraws {
    count: usize,
    picks: [(usize, f64); MAX_MARKERS],
}

impl MarkerDraws {
    pub(super) fn draw(rng: &mut ChaCha8Rng) -> Self {
        let count = rng.random_range(1..=MAX_MARKERS);
        let mut picks = [(0, 0.0); MAX_MARKERS];
        for p in &mut picks {
            *p = (rng.random_range(0..MARKERS.len()), rng.random::<f64>());
        }
        Self { count, picks }
    }

    /// Inserts the markers into `src`; `None` if the formula has no usable gap.
    pub(super) fn apply(&self, src: &str) -> Option<(String, usize)> {
        let toks = tokenize_formula(src).ok()?;
        let gaps = marker_gaps(src, &toks);
        if gaps.is_empty() {
            return None;
        }
        let mut inserts: Vec<(usize, &str)> = self.picks[..self.count]
            .iter()
            .map(|&(m, g)| {
                let k = ((g * gaps.len() as f64) as usize).min(gaps.len() - 1);
                (gaps[k], MARKERS[m])
            })
            .collect();
        inserts.sort_by_key(|&(pos, _)| pos);
        let mut out = String::with_capacity(src.len() + 8 * inserts.len());
        let mut cursor = 0;
        for (k, &(pos, marker)) in inserts.iter().enumerate() {
            out.push_str(&src[cursor..pos]);
            out.push_str(marker);
            let last_here = inserts.get(k + 1).is_none_or(|&(p, _)| p != pos);
            let word = marker[1..].starts_with(|c: char| c.is_ascii_alphabetic());
            if word && last_here && src[pos..].starts_with(|c: char| c.is_ascii_alphabetic()) {
                // terminate the command name without adding visible space
                let spaced = src[..pos].ends_with(char::is_whitespace);
                out.push_str(if spaced { " " } else { "{}" });
            }
            cursor = pos;
        }
        out.push_str(&src[cursor..]);
        Some((out, inserts.len()))
    }
}

fn insert_markers(
    src: &str,
    plan: &FmtPlan,
    rng: &mut ChaCha8Rng,
    stats: &mut PerturbStats,
) -> String {
    let u: f64 = rng.random();
    let draws = MarkerDraws::draw(rng);
    if !plan.enabled(FmtRule::ExtraneousElements) || u >= plan.rate {
        return src.to_string();
    }
    match draws.apply(src) {
        Some((out, n)) => {
            stats.markers += n;
            out
        }
        None => src.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{parse_doc, serialize_doc, Domain};

    fn doc(src: &str) -> StructuredDoc {
        parse_doc(src, "f", 2, Domain::Academic).unwrap()
    }

    #[test]
    fn full_conversion_flips_both_directions() {
        let d = doc("Take $a+b$ now.\n\n$$\\frac{x}{y}$$");
        let plan = FmtPlan::new(1.0, 0).with_rules([FmtRule::FormulaConversion]);
        let p = perturb(&d, &plan);
        assert_eq!(p.stats.converted_formulas, 2);
        assert_eq!(p.doc.blocks[1].kind, BlockKind::BlockFormula);
        let last = p.doc.blocks.last().unwrap();
        assert_eq!(last.kind, BlockKind::InlineFormula);
    }

    #[test]
    fn display_to_inline_pads_neighbours() {
        let d = doc("before\n\n$$x$$\n\nafter");
        let plan = FmtPlan::new(1.0, 0).with_rules([FmtRule::FormulaConversion]);
        let p = perturb(&d, &plan);
        assert_eq!(serialize_doc(&p.doc), "before $x$ after");
    }

    #[test]
    fn symbols_swap_within_class() {
        let d = doc("$$\\mathbf{v} + \\mathcal{L} + \\sigma$$");
        let plan = FmtPlan::new(1.0, 4).with_rules([FmtRule::EquivalentSymbols]);
        let p = perturb(&d, &plan);
        let out = &p.doc.blocks[0].content;
        assert!(out.starts_with("\\boldsymbol{v}"), "{out}");
        assert!(!out.contains("\\mathcal"));
        assert!(out.ends_with('σ'));
        assert_eq!(p.stats.symbol_swaps, 3);
    }

    #[test]
    fn markers_avoid_binding_gaps() {
        let src = "x^2 + \\frac{a}{b} - \\left( y \\right)";
        let toks = tokenize_formula(src).unwrap();
        let gaps = marker_gaps(src, &toks);
        let texts: Vec<&str> = gaps.iter().map(|&g| &src[g..g + 1]).collect();
        assert_eq!(texts, vec!["+", "\\", "-", "\\", "y", "\\"]);
    }

    #[test]
    fn malformed_formula_is_skipped_with_warning() {
        let d = StructuredDoc {
            doc_id: "m".into(),
            page_no: 1,
            domain: Domain::Academic,
            blocks: vec![crate::docmodel::Block::block_formula("\\frac{a")],
        };
        let p = perturb(&d, &FmtPlan::new(1.0, 1));
        assert_eq!(p.doc, d);
        assert_eq!(
            p.warnings,
            vec![PerturbWarning::MalformedFormula { block: 0 }]
        );
    }
}

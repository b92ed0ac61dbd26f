use super::{FmtPlan, FmtRule, PerturbStats, Perturbed};
use crate::docmodel::{Block, BlockKind, StructuredDoc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Bold, italic, underline: (Markdown open/close, LaTeX command).
const STYLES: [(&str, &str); 3] = [("**", "textbf"), ("*", "textit"), ("_", "underline")];

const SECTION_COMMANDS: [&str; 3] = ["section", "subsection", "subsubsection"];

/// Characters that make an item unsafe to wrap without changing how the
/// wrapper is parsed back.
const UNWRAPPABLE: [char; 6] = ['{', '}', '\\', '$', '*', '_'];

/// Characters a paragraph break must not put at the start of a line.
const LINE_START_SENSITIVE: [char; 5] = ['#', '|', '$', '<', '\\'];

struct Streams {
    style: ChaCha8Rng,
    title: ChaCha8Rng,
    brk: ChaCha8Rng,
}

pub(super) fn perturb(doc: &StructuredDoc, plan: &FmtPlan) -> Perturbed {
    let mut streams = Streams {
        style: plan.rng(doc, FmtRule::TextStyle),
        title: plan.rng(doc, FmtRule::TitleFormatting),
        brk: plan.rng(doc, FmtRule::ParagraphBreak),
    };
    let mut stats = PerturbStats::default();
    let mut blocks = Vec::with_capacity(doc.blocks.len());
    for (i, block) in doc.blocks.iter().enumerate() {
        if block.kind != BlockKind::Text {
            blocks.push(block.clone());
            continue;
        }
        let touches_inline = |j: Option<usize>| {
            j.and_then(|j| doc.blocks.get(j))
                .is_some_and(|b| b.kind == BlockKind::InlineFormula)
        };
        let standalone = !touches_inline(i.checked_sub(1)) && !touches_inline(Some(i + 1));
        blocks.extend(perturb_block(
            &block.content,
            standalone,
            plan,
            &mut streams,
            &mut stats,
        ));
    }
    Perturbed {
        doc: StructuredDoc {
            blocks,
            ..doc.clone()
        },
        stats,
        warnings: Vec::new(),
    }
}

#[derive(Clone, Copy)]
struct Word {
    start: usize,
    end: usize,
}

fn words_of(s: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(st)) => {
                words.push(Word { start: st, end: i });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(st) = start {
        words.push(Word {
            start: st,
            end: s.len(),
        });
    }
    words
}

fn ends_sentence(word: &str) -> bool {
    let core = word.trim_end_matches(['"', '\'', ')', ']']);
    core.ends_with(['.', '!', '?'])
}

/// Splits word indices into sentences.
fn sentences(content: &str, words: &[Word]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut first = 0;
    for (k, w) in words.iter().enumerate() {
        if ends_sentence(&content[w.start..w.end]) {
            out.push((first, k + 1));
            first = k + 1;
        }
    }
    if first < words.len() {
        out.push((first, words.len()));
    }
    out
}

struct Title {
    level: u8,
    latex: bool,
}

fn perturb_block(
    content: &str,
    standalone: bool,
    plan: &FmtPlan,
    rng: &mut Streams,
    stats: &mut PerturbStats,
) -> Vec<Block> {
    let words = words_of(content);
    if words.is_empty() {
        return vec![Block::text(content)];
    }
    let rate = plan.rate;
    let sents = sentences(content, &words);

    // Per-word wrapper insertions: (open before word, close after word).
    let mut opens: Vec<String> = vec![String::new(); words.len()];
    let mut closes: Vec<String> = vec![String::new(); words.len()];
    let mut titles: Vec<Option<Title>> = Vec::with_capacity(sents.len());

    for &(first, last) in &sents {
        let u: f64 = rng.title.random();
        let level = rng.title.random_range(1..=3u8);
        let latex: bool = rng.title.random();
        let last_word = &content[words[last - 1].start..words[last - 1].end];
        let candidate = standalone
            && last - first <= 5
            && last_word.ends_with('.')
            && !last_word.ends_with("..")
            && !content[words[first].start..words[last - 1].end].contains('$');
        if plan.enabled(FmtRule::TitleFormatting) && candidate && u < rate {
            titles.push(Some(Title { level, latex }));
            stats.titles += 1;
        } else {
            titles.push(None);
        }

        let mut k = first;
        while k < last {
            let size = rng.style.random_range(2..=5usize);
            let end = (k + size).min(last);
            let u: f64 = rng.style.random();
            let style = rng.style.random_range(0..STYLES.len());
            let latex: bool = rng.style.random();
            let item = &content[words[k].start..words[end - 1].end];
            if plan.enabled(FmtRule::TextStyle) && u < rate && !item.contains(UNWRAPPABLE) {
                let (md, cmd) = STYLES[style];
                if latex {
                    opens[k].push_str(&format!("\\{cmd}{{"));
                    closes[end - 1].insert(0, '}');
                } else {
                    opens[k].push_str(md);
                    closes[end - 1].insert_str(0, md);
                }
                stats.styled_items += 1;
            }
            k = end;
        }
    }

    let mut sentence_of = vec![0usize; words.len()];
    for (s, &(first, last)) in sents.iter().enumerate() {
        sentence_of[first..last].fill(s);
    }

    // Paragraph breaks go right before the next word, after the gap.
    let mut breaks = vec![false; words.len()];
    for k in 1..words.len() {
        let u: f64 = rng.brk.random();
        let gap = &content[words[k - 1].end..words[k].start];
        let in_title = titles[sentence_of[k - 1]].is_some() || titles[sentence_of[k]].is_some();
        let next_char = content[words[k].start..].chars().next().unwrap_or(' ');
        if plan.enabled(FmtRule::ParagraphBreak)
            && u < plan.break_rate()
            && !gap.contains('\n')
            && !in_title
            && !LINE_START_SENSITIVE.contains(&next_char)
        {
            breaks[k] = true;
            stats.line_breaks += 1;
        }
    }

    let render_span = |from_word: usize, to_word: usize, start: usize, end: usize| -> String {
        let mut out = String::new();
        let mut cursor = start;
        for k in from_word..to_word {
            let w = words[k];
            out.push_str(&content[cursor..w.start]);
            if breaks[k] && k > from_word {
                out.push('\n');
            }
            out.push_str(&opens[k]);
            out.push_str(&content[w.start..w.end]);
            out.push_str(&closes[k]);
            cursor = w.end;
        }
        out.push_str(&content[cursor..end]);
        out
    };

    if titles.iter().all(Option::is_none) {
        return vec![Block::text(render_span(0, words.len(), 0, content.len()))];
    }

    let mut blocks = Vec::new();
    let mut run_first_word = 0;
    let mut run_start = 0;
    for (s, &(first, last)) in sents.iter().enumerate() {
        let Some(title) = &titles[s] else { continue };
        if first > run_first_word {
            let text = render_span(run_first_word, first, run_start, words[first].start);
            let text = if run_first_word == 0 {
                text.trim_end()
            } else {
                text.trim()
            };
            if !text.is_empty() {
                blocks.push(Block::text(text));
            }
        }
        let heading: Vec<String> = (first..last)
            .map(|k| {
                format!(
                    "{}{}{}",
                    opens[k],
                    &content[words[k].start..words[k].end],
                    closes[k]
                )
            })
            .collect();
        let heading = heading.join(" ");
        if title.latex {
            let cmd = SECTION_COMMANDS[title.level as usize - 1];
            blocks.push(Block::text(format!("\\{cmd}{{{heading}}}")));
        } else {
            blocks.push(Block::heading(title.level, heading));
        }
        run_first_word = last;
        run_start = words[last - 1].end;
    }
    if run_first_word < words.len() {
        let text = render_span(run_first_word, words.len(), run_start, content.len());
        let text = text.trim_start();
        if !text.is_empty() {
            blocks.push(Block::text(text));
        }
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{parse_doc, serialize_doc, Domain};

    fn doc(src: &str) -> StructuredDoc {
        parse_doc(src, "t", 1, Domain::Textbook).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let d = doc("Short heading here.\n\nSome longer text with many words in it, and more.");
        let p = perturb(&d, &FmtPlan::new(0.0, 9));
        assert_eq!(p.doc, d);
        assert_eq!(p.stats.total(), 0);
    }

    #[test]
    fn full_rate_styles_every_item() {
        let d = doc("alpha beta gamma delta");
        let plan = FmtPlan::new(1.0, 3).with_rules([FmtRule::TextStyle]);
        let p = perturb(&d, &plan);
        let out = serialize_doc(&p.doc);
        assert!(p.stats.styled_items >= 1);
        for w in ["alpha", "delta"] {
            assert!(out.contains(w));
        }
        assert_ne!(out, "alpha beta gamma delta");
        // items cover all four words: the first word opens a wrapper, the last closes one
        assert!(!out.starts_with("alpha"));
        assert!(!out.ends_with("delta"));
    }

    #[test]
    fn titles_come_from_short_sentences_only() {
        let d = doc("A very long sentence that certainly has more than five words. Short title here. Trailing words");
        let plan = FmtPlan::new(1.0, 5).with_rules([FmtRule::TitleFormatting]);
        let p = perturb(&d, &plan);
        assert_eq!(p.stats.titles, 1);
        assert_eq!(p.doc.blocks.len(), 3);
        let middle = &p.doc.blocks[1];
        match middle.kind {
            BlockKind::Heading { level } => {
                assert!((1..=3).contains(&level));
                assert_eq!(middle.content, "Short title here.");
            }
            BlockKind::Text => assert!(middle.content.starts_with("\\")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_titles_next_to_inline_formulas() {
        let d = doc("Short one. $x$ after");
        let plan = FmtPlan::new(1.0, 5).with_rules([FmtRule::TitleFormatting]);
        assert_eq!(perturb(&d, &plan).stats.titles, 0);
    }

    #[test]
    fn paragraph_breaks_insert_newlines() {
        let d = doc("one two three four five six");
        let plan = FmtPlan::new(1.0, 1).with_rules([FmtRule::ParagraphBreak]);
        let p = perturb(&d, &plan);
        assert_eq!(p.stats.line_breaks, 5);
        assert_eq!(
            p.doc.blocks[0].content,
            "one \ntwo \nthree \nfour \nfive \nsix"
        );
    }

    #[test]
    fn lower_rate_selections_are_nested() {
        let d = doc("The quick brown fox jumps over the lazy dog near the river bank today. It was quiet. Birds sang loudly in the tall old trees all morning long.");
        let counts: Vec<usize> = [0.1, 0.3, 0.6, 1.0]
            .iter()
            .map(|&r| perturb(&d, &FmtPlan::new(r, 11)).stats.total())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }
}

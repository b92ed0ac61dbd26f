//! Formatting noise: semantics-preserving perturbations of ground-truth
//! pages, their inverse, and table format conversion.
//!
//! Every rule draws from its own seeded stream keyed by
//! `(seed, doc_id, page_no, rule)`, and the number of draws a rule makes never
//! depends on the rate. Two plans that differ only in `rate` therefore see
//! the same random numbers, and the items perturbed at a lower rate are a
//! subset of those perturbed at a higher one.

mod convert;
mod formula;
mod strip;
pub mod symbols;
mod table;
mod text;

pub use convert::{
    convert_table, parse_table, render_table, Converted, GridCell, Slot, TableError, TableGrid,
    TableWarning,
};
pub use strip::{normalize_whitespace, strip_formatting, strip_formatting_text};

use crate::docmodel::StructuredDoc;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// The three rates used for mild, moderate and severe formatting noise.
pub const NOISE_LEVELS: [f64; 3] = [0.1, 0.3, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FmtRule {
    TextStyle,
    TitleFormatting,
    ParagraphBreak,
    FormulaConversion,
    ExtraneousElements,
    EquivalentSymbols,
    TableLines,
    TableCellContent,
}

impl FmtRule {
    pub const ALL: [FmtRule; 8] = [
        FmtRule::TextStyle,
        FmtRule::TitleFormatting,
        FmtRule::ParagraphBreak,
        FmtRule::FormulaConversion,
        FmtRule::ExtraneousElements,
        FmtRule::EquivalentSymbols,
        FmtRule::TableLines,
        FmtRule::TableCellContent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FmtRule::TextStyle => "text_style",
            FmtRule::TitleFormatting => "title_formatting",
            FmtRule::ParagraphBreak => "paragraph_break",
            FmtRule::FormulaConversion => "formula_conversion",
            FmtRule::ExtraneousElements => "extraneous_elements",
            FmtRule::EquivalentSymbols => "equivalent_symbols",
            FmtRule::TableLines => "table_lines",
            FmtRule::TableCellContent => "table_cell_content",
        }
    }
}

impl fmt::Display for FmtRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FmtRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        FmtRule::ALL
            .into_iter()
            .find(|r| r.as_str() == key)
            .ok_or_else(|| format!("unknown formatting rule `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmtPlan {
    pub rate: f64,
    pub seed: u64,
    pub rules: BTreeSet<FmtRule>,
    /// Per-gap probability for [`FmtRule::ParagraphBreak`]; `None` means `rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph_break_rate: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("rate {0} is outside [0, 1]")]
    InvalidRate(f64),
}

impl FmtPlan {
    /// A plan with every rule enabled.
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            seed,
            rules: FmtRule::ALL.into_iter().collect(),
            paragraph_break_rate: None,
        }
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = FmtRule>) -> Self {
        self.rules = rules.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        for r in [Some(self.rate), self.paragraph_break_rate]
            .into_iter()
            .flatten()
        {
            if !(0.0..=1.0).contains(&r) {
                return Err(PlanError::InvalidRate(r));
            }
        }
        Ok(())
    }

    pub fn enabled(&self, rule: FmtRule) -> bool {
        self.rules.contains(&rule)
    }

    pub(crate) fn break_rate(&self) -> f64 {
        self.paragraph_break_rate.unwrap_or(self.rate)
    }

    pub(crate) fn rng(&self, doc: &StructuredDoc, rule: FmtRule) -> rand_chacha::ChaCha8Rng {
        crate::seed::derive_rng(
            self.seed,
            &[&doc.doc_id, &doc.page_no.to_string(), rule.as_str()],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbWarning {
    MalformedFormula { block: usize },
    MalformedTable { block: usize },
}

/// Number of perturbations each rule actually applied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbStats {
    pub styled_items: usize,
    pub titles: usize,
    pub line_breaks: usize,
    pub converted_formulas: usize,
    pub markers: usize,
    pub symbol_swaps: usize,
    pub table_lines: usize,
    pub perturbed_cells: usize,
}

impl PerturbStats {
    pub fn total(&self) -> usize {
        self.styled_items
            + self.titles
            + self.line_breaks
            + self.converted_formulas
            + self.markers
            + self.symbol_swaps
            + self.table_lines
            + self.perturbed_cells
    }

    fn add(&mut self, other: &PerturbStats) {
        self.styled_items += other.styled_items;
        self.titles += other.titles;
        self.line_breaks += other.line_breaks;
        self.converted_formulas += other.converted_formulas;
        self.markers += other.markers;
        self.symbol_swaps += other.symbol_swaps;
        self.table_lines += other.table_lines;
        self.perturbed_cells += other.perturbed_cells;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub doc: StructuredDoc,
    pub stats: PerturbStats,
    pub warnings: Vec<PerturbWarning>,
}

impl Perturbed {
    fn identity(doc: &StructuredDoc) -> Self {
        Self {
            doc: doc.clone(),
            stats: PerturbStats::default(),
            warnings: Vec::new(),
        }
    }

    fn then(mut self, step: impl FnOnce(&StructuredDoc) -> Perturbed) -> Self {
        let next = step(&self.doc);
        self.doc = next.doc;
        self.stats.add(&next.stats);
        self.warnings.extend(next.warnings);
        self
    }
}

/// Plain-text rules: text style, title formatting and paragraph breaks.
pub fn perturb_text(doc: &StructuredDoc, plan: &FmtPlan) -> Perturbed {
    text::perturb(doc, plan)
}

/// Formula rules: inline/display conversion, extraneous markers and
/// equivalent symbols.
pub fn perturb_formula(doc: &StructuredDoc, plan: &FmtPlan) -> Perturbed {
    formula::perturb(doc, plan)
}

/// Table rules: row/column lines and cell content.
pub fn perturb_table(doc: &StructuredDoc, plan: &FmtPlan) -> Perturbed {
    table::perturb(doc, plan)
}

/// Applies text, formula and table rules in that order.
pub fn perturb(doc: &StructuredDoc, plan: &FmtPlan) -> Perturbed {
    Perturbed::identity(doc)
        .then(|d| perturb_text(d, plan))
        .then(|d| perturb_formula(d, plan))
        .then(|d| perturb_table(d, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_names_round_trip() {
        for rule in FmtRule::ALL {
            assert_eq!(rule.as_str().parse::<FmtRule>(), Ok(rule));
        }
        assert_eq!("table-lines".parse::<FmtRule>(), Ok(FmtRule::TableLines));
        assert!("bogus".parse::<FmtRule>().is_err());
    }

    const PAGE: &str = "# Heat transfer\n\nConduction moves energy through a solid. Short note here. The rate depends on $k \\nabla T$ and area.\n\n$$q = -k \\frac{dT}{dx} + \\mathbf{v}\\cdot\\sigma$$\n\nResults are in the table below, measured at noon.\n\n\\begin{table}\n\\begin{tabular}{lcr}\nMaterial & $k$ & Rank \\\\\nCopper & 401 & 1 \\\\\n\\multicolumn{2}{c}{Steel alloy} & 3 \\\\\n\\end{tabular}\n\\end{table}\n\nSee also.\n\n<chart>bar: copper 401, steel 50</chart>";

    #[test]
    fn strip_inverts_every_rule() {
        let doc = crate::docmodel::parse_doc(PAGE, "p", 1, crate::Domain::Textbook).unwrap();
        // the page itself uses \\mathbf and math inside a table, so compare
        // against its own stripped form
        let want = strip_formatting(&doc);
        for seed in 0..200 {
            for rate in [0.1, 0.3, 0.6, 1.0] {
                let p = perturb(&doc, &FmtPlan::new(rate, seed));
                assert!(p.warnings.is_empty());
                let text = crate::docmodel::serialize_doc(&p.doc);
                let reparsed = crate::docmodel::parse_doc(&text, "p", 1, crate::Domain::Textbook)
                    .unwrap_or_else(|e| panic!("seed {seed} rate {rate}: {e}\n{text}"));
                assert_eq!(
                    strip_formatting(&reparsed),
                    want,
                    "seed {seed} rate {rate}\n{text}"
                );
            }
        }
    }

    #[test]
    fn plan_rate_is_checked() {
        assert!(FmtPlan::new(0.3, 1).validate().is_ok());
        assert_eq!(
            FmtPlan::new(1.5, 1).validate(),
            Err(PlanError::InvalidRate(1.5))
        );
    }
}

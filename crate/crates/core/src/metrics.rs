//! Edit distance, evidence LCS, answer F1 and the `r_noise` quantifier.
//!
//! Strings are compared as sequences of Unicode scalar values. Both distance
//! kernels are bit-parallel and use memory linear in the shorter input.

use crate::docmodel::{PageKey, QaRecord};
use crate::fmtnoise::{strip_formatting_text, FmtPlan};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::Hash;
use thiserror::Error;

/// A QA is unaffected by a perturbation when its evidence LCS exceeds this.
pub const UNAFFECTED_LCS: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    EditDistance,
    LcsScore,
    F1,
    RNoise,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::EditDistance => "edit_distance",
            MetricKind::LcsScore => "lcs_score",
            MetricKind::F1 => "f1",
            MetricKind::RNoise => "r_noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

impl MetricValue {
    /// Clamps to `[0, 1]`; NaN is rejected.
    pub fn new(kind: MetricKind, value: f64) -> Result<Self, MetricError> {
        if value.is_nan() {
            return Err(MetricError::NotANumber(kind));
        }
        Ok(Self {
            kind,
            value: value.clamp(0.0, 1.0),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("evidence is empty")]
    EmptyEvidence,
    #[error("no perturbed text for page {0}")]
    MissingPage(PageKey),
    #[error("{} evaluated to NaN", .0.as_str())]
    NotANumber(MetricKind),
}

/// Unit of comparison for LCS.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcsUnit {
    #[default]
    Char,
    Token,
}

/// Per-symbol match masks for a pattern split into 64-bit blocks.
struct Peq<T> {
    masks: HashMap<T, Vec<u64>>,
    blocks: usize,
}

impl<T: Eq + Hash + Clone> Peq<T> {
    fn new(pattern: &[T]) -> Self {
        let blocks = pattern.len().div_ceil(64);
        let mut masks: HashMap<T, Vec<u64>> = HashMap::new();
        for (i, sym) in pattern.iter().enumerate() {
            masks.entry(sym.clone()).or_insert_with(|| vec![0; blocks])[i / 64] |= 1 << (i % 64);
        }
        Self { masks, blocks }
    }

    fn get(&self, sym: &T) -> Option<&[u64]> {
        self.masks.get(sym).map(Vec::as_slice)
    }
}

/// Levenshtein distance over any symbol type (Myers/Hyyrö, multi-block).
pub fn levenshtein<T: Eq + Hash + Clone>(a: &[T], b: &[T]) -> usize {
    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let m = pattern.len();
    if m == 0 {
        return text.len();
    }
    let peq = Peq::new(pattern);
    let nb = peq.blocks;
    let last_bit = (m - 1) % 64;
    let zeros = vec![0u64; nb];
    let mut pv = vec![u64::MAX; nb];
    let mut mv = vec![0u64; nb];
    // score[b] tracks D at the block's last row; the final block stops at row m
    let mut score: Vec<i64> = (0..nb).map(|b| ((b + 1) * 64).min(m) as i64).collect();

    for sym in text {
        let eqs = peq.get(sym).unwrap_or(&zeros);
        let mut hin: i64 = 1;
        for b in 0..nb {
            let bit = if b + 1 == nb { last_bit } else { 63 };
            let neg = u64::from(hin < 0);
            let pos = u64::from(hin > 0);
            let xv = eqs[b] | mv[b];
            let eq = eqs[b] | neg;
            let xh = ((eq & pv[b]).wrapping_add(pv[b]) ^ pv[b]) | eq;
            let mut ph = mv[b] | !(xh | pv[b]);
            let mut mh = pv[b] & xh;
            let hout = ((ph >> bit) & 1) as i64 - ((mh >> bit) & 1) as i64;
            ph = (ph << 1) | pos;
            mh = (mh << 1) | neg;
            pv[b] = mh | !(xv | ph);
            mv[b] = ph & xv;
            score[b] += hout;
            hin = hout;
        }
    }
    score[nb - 1] as usize
}

/// Length of the longest common subsequence (bit-parallel, multi-word).
pub fn lcs_len<T: Eq + Hash + Clone>(a: &[T], b: &[T]) -> usize {
    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let m = pattern.len();
    if m == 0 {
        return 0;
    }
    let peq = Peq::new(pattern);
    let mut v = vec![u64::MAX; peq.blocks];
    for sym in text {
        let Some(mask) = peq.get(sym) else { continue };
        let mut carry = false;
        for (w, &mw) in v.iter_mut().zip(mask) {
            let u = *w & mw;
            let (s1, c1) = w.overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(u64::from(carry));
            carry = c1 || c2;
            *w = s2 | (*w & !mw);
        }
    }
    let mut zeros = 0;
    for (k, w) in v.iter().enumerate() {
        let bits = (m - k * 64).min(64);
        let mask = if bits == 64 {
            u64::MAX
        } else {
            (1u64 << bits) - 1
        };
        zeros += (!w & mask).count_ones() as usize;
    }
    zeros
}

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

/// `Levenshtein(pred, gt) / max(|pred|, |gt|)`.
pub fn edit_distance_norm(pred: &str, gt: &str) -> Result<f64, MetricError> {
    if gt.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    let (p, g) = (chars(pred), chars(gt));
    let d = levenshtein(&p, &g);
    Ok(d as f64 / p.len().max(g.len()) as f64)
}

/// Fraction of the evidence recovered as a subsequence of `retrieved`.
pub fn lcs_score(evidence: &str, retrieved: &str) -> Result<f64, MetricError> {
    lcs_score_with(evidence, retrieved, LcsUnit::Char)
}

pub fn lcs_score_with(evidence: &str, retrieved: &str, unit: LcsUnit) -> Result<f64, MetricError> {
    match unit {
        LcsUnit::Char => {
            let e = chars(evidence);
            if e.is_empty() {
                return Err(MetricError::EmptyEvidence);
            }
            Ok(lcs_len(&e, &chars(retrieved)) as f64 / e.len() as f64)
        }
        LcsUnit::Token => {
            let e: Vec<&str> = evidence.split_whitespace().collect();
            if e.is_empty() {
                return Err(MetricError::EmptyEvidence);
            }
            let r: Vec<&str> = retrieved.split_whitespace().collect();
            Ok(lcs_len(&e, &r) as f64 / e.len() as f64)
        }
    }
}

/// LCS that ignores formatting noise. Both sides are stripped so that
/// delimiters present in the ground-truth evidence (`$`, heading marks)
/// compare the same way as in the retrieved text. A zero-rate plan applies
/// no noise and falls back to the plain score.
pub fn lcs_score_fmt_aware(
    evidence: &str,
    retrieved: &str,
    plan: &FmtPlan,
) -> Result<f64, MetricError> {
    if plan.rate == 0.0 {
        return lcs_score(evidence, retrieved);
    }
    let e = strip_formatting_text(evidence);
    if e.is_empty() {
        return Err(MetricError::EmptyEvidence);
    }
    lcs_score(&e, &strip_formatting_text(retrieved))
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, drops punctuation and articles, and splits on whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_string)
        .collect()
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 against the best-matching gold answer.
pub fn answer_f1(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    golds
        .iter()
        .map(|g| token_f1(&p, &normalize_answer(g)))
        .fold(0.0, f64::max)
}

/// Text a QA is checked against: its page, or its pages joined by newline.
pub fn qa_context(qa: &QaRecord, pages: &HashMap<PageKey, String>) -> Result<String, MetricError> {
    let mut parts = Vec::new();
    for key in qa.pages() {
        let text = pages
            .get(&key)
            .ok_or_else(|| MetricError::MissingPage(key.clone()))?;
        parts.push(text.as_str());
    }
    Ok(parts.join("\n"))
}

/// Fraction of QAs whose evidence LCS on the perturbed pages is at most
/// [`UNAFFECTED_LCS`].
pub fn r_noise(qas: &[QaRecord], perturbed: &HashMap<PageKey, String>) -> Result<f64, MetricError> {
    r_noise_with(qas, perturbed, lcs_score)
}

pub fn r_noise_with(
    qas: &[QaRecord],
    perturbed: &HashMap<PageKey, String>,
    score: impl Fn(&str, &str) -> Result<f64, MetricError>,
) -> Result<f64, MetricError> {
    if qas.is_empty() {
        return Ok(0.0);
    }
    let mut affected = 0usize;
    for qa in qas {
        let context = qa_context(qa, perturbed)?;
        if score(&qa.evidence, &context)? <= UNAFFECTED_LCS {
            affected += 1;
        }
    }
    Ok(affected as f64 / qas.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance_norm("abc", "abc"), Ok(0.0));
        assert!((edit_distance_norm("kitten", "sitting").unwrap() - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(edit_distance_norm("", "ab"), Ok(1.0));
        assert_eq!(
            edit_distance_norm("ab", ""),
            Err(MetricError::EmptyGroundTruth)
        );
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_score("abcde", "ace"), Ok(0.6));
        assert_eq!(lcs_score("ace", "xxabcdexx"), Ok(1.0));
        assert_eq!(lcs_score("abc", ""), Ok(0.0));
        assert_eq!(lcs_score("", "abc"), Err(MetricError::EmptyEvidence));
    }

    #[test]
    fn long_inputs_cross_block_boundaries() {
        let a: Vec<char> = "the quick brown fox ".repeat(20).chars().collect();
        let mut b = a.clone();
        b.remove(70);
        b.insert(130, 'z');
        b[200] = 'q';
        assert_eq!(levenshtein(&a, &b), 3);
        assert_eq!(lcs_len(&a, &b), a.len() - 2);
    }

    #[test]
    fn f1_examples() {
        let g = |s: &str| vec![s.to_string()];
        assert_eq!(answer_f1("Paris", &g("Paris")), 1.0);
        assert_eq!(answer_f1("the Paris city", &g("Paris city")), 1.0);
        assert_eq!(answer_f1("alpha beta", &g("beta gamma")), 0.5);
        assert_eq!(answer_f1("", &g("the")), 1.0);
        assert_eq!(answer_f1("", &g("x")), 0.0);
        assert_eq!(answer_f1("x", &["y".into(), "x".into()]), 1.0);
    }

    #[test]
    fn metric_value_clamps_and_rejects_nan() {
        assert_eq!(MetricValue::new(MetricKind::F1, 1.5).unwrap().value, 1.0);
        assert!(MetricValue::new(MetricKind::F1, f64::NAN).is_err());
    }

    #[test]
    fn token_lcs() {
        assert_eq!(
            lcs_score_with("a b c", "a x c", LcsUnit::Token),
            Ok(2.0 / 3.0)
        );
    }
}

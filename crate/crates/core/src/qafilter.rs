//! Rule-based Q&A quality filters, plus a hook for endpoint-judged checks.

use crate::docmodel::QaRecord;
use crate::generation::{ChatEndpoint, GenError, PromptAsset};
use crate::metrics::{answer_f1, normalize_answer};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const PRONOUNS: [&str; 6] = ["he", "she", "it", "they", "this", "that"];
pub const DOCUMENT_PHRASES: [&str; 2] = ["in the document", "according to the document"];
pub const DEFAULT_VOTE_THRESHOLD: usize = 3;

/// Words that never count as the object of an "of <noun>" entity phrase.
const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "it", "its", "them", "they", "he", "she",
    "him", "her", "his", "their", "which", "what", "who", "whom", "whose", "all", "each", "any",
    "some", "one", "ones", "such",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QaFilterError {
    #[error("no responses to vote on")]
    EmptyResponses,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Reason {
    NoEntity,
    AmbiguousPronouns { count: usize },
    DocumentReference { phrase: String },
    JudgeRejected,
    JudgeUnparseable { reply: String },
}

impl Reason {
    pub fn label(&self) -> &'static str {
        match self {
            Reason::NoEntity => "no_entity",
            Reason::AmbiguousPronouns { .. } => "ambiguous_pronouns",
            Reason::DocumentReference { .. } => "document_reference",
            Reason::JudgeRejected => "judge_rejected",
            Reason::JudgeUnparseable { .. } => "judge_unparseable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub reasons: Vec<Reason>,
}

impl Verdict {
    fn from_reasons(reasons: Vec<Reason>) -> Self {
        Self {
            pass: reasons.is_empty(),
            reasons,
        }
    }
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect()
}

/// Heuristic entity detector: a capitalised word that does not start a
/// sentence, a quoted span, a token with a digit, or "of <noun>".
pub fn has_entity(question: &str) -> bool {
    let mut sentence_start = true;
    for raw in question.split_whitespace() {
        let w = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if !w.is_empty() {
            if !sentence_start && w != "I" && w.starts_with(char::is_uppercase) {
                return true;
            }
            if w.chars().any(|c| c.is_ascii_digit()) {
                return true;
            }
            sentence_start = false;
        }
        if raw.ends_with(['.', '?', '!', ':']) {
            sentence_start = true;
        }
    }
    for q in ['"', '\u{201c}'] {
        let close = if q == '"' { '"' } else { '\u{201d}' };
        if let Some(open) = question.find(q) {
            let rest = &question[open + q.len_utf8()..];
            if rest
                .find(close)
                .is_some_and(|end| !rest[..end].trim().is_empty())
            {
                return true;
            }
        }
    }
    let lower: Vec<String> = words(question).iter().map(|w| w.to_lowercase()).collect();
    lower
        .windows(2)
        .any(|p| p[0] == "of" && !FUNCTION_WORDS.contains(&p[1].as_str()))
}

pub fn pronoun_count(question: &str) -> usize {
    words(question)
        .iter()
        .filter(|w| PRONOUNS.contains(&w.to_lowercase().as_str()))
        .count()
}

/// Rejects questions that only make sense next to their source page.
pub fn context_dependence_check(qa: &QaRecord) -> Verdict {
    context_dependence_of(&qa.question)
}

pub fn context_dependence_of(question: &str) -> Verdict {
    let mut reasons = Vec::new();
    if !has_entity(question) {
        reasons.push(Reason::NoEntity);
    }
    let count = pronoun_count(question);
    if count > 1 {
        reasons.push(Reason::AmbiguousPronouns { count });
    }
    let lower = question.to_lowercase();
    for phrase in DOCUMENT_PHRASES {
        if lower.contains(phrase) {
            reasons.push(Reason::DocumentReference {
                phrase: phrase.to_string(),
            });
        }
    }
    Verdict::from_reasons(reasons)
}

fn is_correct(response: &str, golds: &[String]) -> bool {
    answer_f1(response, golds) >= 1.0
}

/// Best-of-N check: the most frequent normalised answer must be correct and
/// at least `threshold` responses must be correct. A tie for the most
/// frequent answer fails.
pub fn correctness_vote(
    qa: &QaRecord,
    responses: &[String],
    threshold: usize,
) -> Result<bool, QaFilterError> {
    if responses.is_empty() {
        return Err(QaFilterError::EmptyResponses);
    }
    let mut votes: HashMap<String, usize> = HashMap::new();
    for r in responses {
        *votes.entry(normalize_answer(r).join(" ")).or_default() += 1;
    }
    let top = *votes.values().max().unwrap();
    let leaders: Vec<&String> = votes
        .iter()
        .filter(|(_, &n)| n == top)
        .map(|(a, _)| a)
        .collect();
    if leaders.len() != 1 {
        return Ok(false);
    }
    let correct = responses
        .iter()
        .filter(|r| is_correct(r, &qa.answers))
        .count();
    Ok(is_correct(leaders[0], &qa.answers) && correct >= threshold)
}

/// A multi-page question is kept only if no single-page or context-free
/// setting already answers it.
pub fn multipage_validity(
    qa: &QaRecord,
    responses_no_ctx: &[String],
    responses_ctx_a: &[String],
    responses_ctx_b: &[String],
) -> bool {
    ![responses_no_ctx, responses_ctx_a, responses_ctx_b]
        .iter()
        .any(|set| set.iter().any(|r| is_correct(r, &qa.answers)))
}

/// Reads a judge reply whose first non-blank line is `pass` or `fail`.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty())?;
    match line
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
        .as_str()
    {
        "pass" => Some(true),
        "fail" => Some(false),
        _ => None,
    }
}

/// Asks an endpoint to verify one Q&A pair. Replies that are neither `pass`
/// nor `fail` reject the pair.
pub fn judge_check(
    endpoint: &dyn ChatEndpoint,
    qa: &QaRecord,
    task_description: &str,
) -> Result<Verdict, GenError> {
    let qas = format!(
        "{}\nReply with a single line: pass or fail.",
        serde_json::json!({
            "question": qa.question,
            "answer": qa.answers,
            "evidence_context": qa.evidence,
        })
    );
    let values = HashMap::from([
        ("detailed_task_description", task_description),
        ("qas", qas.as_str()),
    ]);
    let prompt = PromptAsset::qa_verification().render_with(&values)?;
    let reply = endpoint.complete(&prompt)?.text;
    Ok(match parse_verdict(&reply) {
        Some(true) => Verdict::from_reasons(vec![]),
        Some(false) => Verdict::from_reasons(vec![Reason::JudgeRejected]),
        None => Verdict::from_reasons(vec![Reason::JudgeUnparseable { reply }]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub qa_id: String,
    pub reasons: Vec<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    /// Rejections per rule; a QA failing two rules counts under both.
    pub by_rule: BTreeMap<String, usize>,
    pub rejected: Vec<Rejection>,
}

/// Applies the rule-based filter and, when given, the endpoint judge. The
/// judge only sees questions that passed the rules.
pub fn filter_qas(
    qas: &[QaRecord],
    judge: Option<&dyn ChatEndpoint>,
) -> Result<(Vec<QaRecord>, FilterReport), GenError> {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut by_rule: BTreeMap<String, usize> = BTreeMap::new();
    for qa in qas {
        let mut verdict = context_dependence_check(qa);
        if verdict.pass {
            if let Some(endpoint) = judge {
                let task = match qa.evidence_source {
                    crate::docmodel::EvidenceSource::Txt => "understanding",
                    crate::docmodel::EvidenceSource::Ro => "reading_order",
                    _ => "structure_data",
                };
                let description = crate::generation::task_description(task).unwrap_or_default();
                verdict = judge_check(endpoint, qa, &description)?;
            }
        }
        if verdict.pass {
            kept.push(qa.clone());
        } else {
            for r in &verdict.reasons {
                *by_rule.entry(r.label().to_string()).or_default() += 1;
            }
            rejected.push(Rejection {
                qa_id: qa.qa_id.clone(),
                reasons: verdict.reasons,
            });
        }
    }
    let report = FilterReport {
        total: qas.len(),
        kept: kept.len(),
        by_rule,
        rejected,
    };
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{AnswerFormat, Domain, EvidenceSource, Task};
    use crate::generation::mock::MockChat;

    fn qa(question: &str, answer: &str) -> QaRecord {
        QaRecord {
            qa_id: "q".into(),
            doc_id: "d".into(),
            page_no: 1,
            question: question.into(),
            answers: vec![answer.into()],
            evidence: "e".into(),
            evidence_source: EvidenceSource::Txt,
            task: Task::Understanding,
            multipage: false,
            related_pages: vec![],
            answer_format: AnswerFormat::String,
            domain: Domain::Academic,
        }
    }

    fn strs(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn document_phrase_fails() {
        let v = context_dependence_of("According to the document, what is X?");
        assert!(!v.pass);
        assert!(v.reasons.contains(&Reason::DocumentReference {
            phrase: "according to the document".into()
        }));
    }

    #[test]
    fn plain_question_passes() {
        assert!(context_dependence_of("What is the melting point of tungsten?").pass);
        assert!(context_dependence_of("When did the Treaty of Ghent take effect?").pass);
        assert!(context_dependence_of("How many staff joined in 2021?").pass);
    }

    #[test]
    fn pronoun_rule() {
        let v = context_dependence_of("Why did he say this about it?");
        assert!(v.reasons.contains(&Reason::AmbiguousPronouns { count: 3 }));
        // one pronoun alone is tolerated
        assert!(context_dependence_of("Where did Marie Curie say it?").pass);
    }

    #[test]
    fn sentence_initial_capital_is_not_an_entity() {
        assert!(!has_entity("What happened next?"));
        assert!(has_entity("What did \"the board\" decide?"));
    }

    #[test]
    fn votes() {
        let q = qa("Capital of France?", "Paris");
        assert!(correctness_vote(&q, &vec!["Paris".to_string(); 10], 3).unwrap());
        let two = strs(&[
            "Paris", "paris", "Lyon", "Lyon", "Lyon", "Nice", "Nice", "Nice", "Nice", "x",
        ]);
        assert!(!correctness_vote(&q, &two, 3).unwrap());
        // three correct, but the plurality is wrong
        let three = strs(&[
            "Paris", "Paris", "Paris", "Lyon", "Lyon", "Lyon", "Lyon", "x", "y", "z",
        ]);
        assert!(!correctness_vote(&q, &three, 3).unwrap());
        // a tie at the top fails closed
        let tie = strs(&["Paris", "Paris", "Paris", "Lyon", "Lyon", "Lyon"]);
        assert!(!correctness_vote(&q, &tie, 3).unwrap());
        assert_eq!(
            correctness_vote(&q, &[], 3),
            Err(QaFilterError::EmptyResponses)
        );
    }

    #[test]
    fn multipage() {
        let q = qa("Combined?", "42");
        let wrong = strs(&["7", "8"]);
        assert!(multipage_validity(&q, &wrong, &wrong, &wrong));
        assert!(!multipage_validity(&q, &wrong, &strs(&["42"]), &wrong));
        assert!(!multipage_validity(&q, &strs(&["42"]), &wrong, &wrong));
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("\n PASS.\nbecause"), Some(true));
        assert_eq!(parse_verdict("fail"), Some(false));
        assert_eq!(parse_verdict("maybe"), None);
    }

    #[test]
    fn filter_with_judge() {
        let good = QaRecord {
            qa_id: "good".into(),
            ..qa("What is the melting point of tungsten?", "3422")
        };
        let bad = QaRecord {
            qa_id: "bad".into(),
            ..qa("What does it say in the document?", "x")
        };
        let judge = MockChat::Fixed("fail".into());
        let (kept, report) = filter_qas(&[good.clone(), bad.clone()], None).unwrap();
        assert_eq!(kept, vec![good.clone()]);
        assert_eq!(report.by_rule["document_reference"], 1);
        assert_eq!(report.by_rule["no_entity"], 1);
        let (kept, report) = filter_qas(&[good, bad], Some(&judge)).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.by_rule["judge_rejected"], 1);
    }
}

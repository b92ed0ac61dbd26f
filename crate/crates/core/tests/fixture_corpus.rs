use ocrrag_core::corpus::Corpus;
use ocrrag_core::docmodel::{serialize_doc, Domain, EvidenceSource, PageKey};
use ocrrag_core::generation::{render_prompt, PromptAsset};
use ocrrag_core::retrieval::tokenize;
use std::collections::{BTreeSet, HashSet};
use std::path::Path;

fn corpus() -> Corpus {
    Corpus::fixture().expect("fixture corpus loads")
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn pages_are_in_canonical_form() {
    for page in &corpus().pages {
        let doc = page.parse().unwrap();
        assert_eq!(serialize_doc(&doc), page.content, "{:?}", page.key());
    }
}

#[test]
fn corpus_shape() {
    let c = corpus();
    assert!(c.pages.len() >= 30);
    assert!(c.qas.len() >= 100);
    let domains: BTreeSet<Domain> = c.pages.iter().map(|p| p.domain).collect();
    assert_eq!(domains.len(), Domain::ALL.len());
    let sources: BTreeSet<EvidenceSource> = c.qas.iter().map(|q| q.evidence_source).collect();
    assert_eq!(sources.len(), EvidenceSource::ALL.len());
    assert!(c.qas.iter().any(|q| q.multipage));
    let ids: HashSet<&str> = c.qas.iter().map(|q| q.qa_id.as_str()).collect();
    assert_eq!(ids.len(), c.qas.len(), "duplicate qa ids");
}

#[test]
fn qas_validate_and_quote_their_pages() {
    let c = corpus();
    let pages = c.page_map();
    for qa in &c.qas {
        qa.validate().unwrap();
        let domain = c
            .pages
            .iter()
            .find(|p| p.doc_id == qa.doc_id)
            .map(|p| p.domain);
        assert_eq!(domain, Some(qa.domain), "{}", qa.qa_id);
        let texts: Vec<&str> = qa
            .pages()
            .iter()
            .map(|k| {
                pages
                    .get(k)
                    .unwrap_or_else(|| panic!("{}: no page {k:?}", qa.qa_id))
                    .as_str()
            })
            .collect();
        for line in qa.evidence.lines() {
            assert!(
                texts.iter().any(|t| t.contains(line)),
                "{}: `{line}` not on page",
                qa.qa_id
            );
        }
    }
}

#[test]
fn golden_tokens() {
    let g: serde_json::Value =
        serde_json::from_str(&golden("tokens_finance_paragraph.json")).unwrap();
    let text = g["text"].as_str().unwrap();
    let want: Vec<String> = serde_json::from_value(g["tokens"].clone()).unwrap();
    assert_eq!(tokenize(text), want);
    // the paragraph is taken from a fixture page
    let c = corpus();
    assert!(c.page_map()[&PageKey::new("annual_report_2023", 1)].contains(text));
}

#[test]
fn golden_prompt_render() {
    let c = corpus();
    let qa = c.qas.iter().find(|q| q.qa_id == "fn-02").unwrap();
    let page = c.page_map()[&qa.pages()[0]].clone();
    let prompt = render_prompt(&PromptAsset::rag_generation(), &qa.question, &[page]).unwrap();
    let rendered = format!("[system]\n{}\n[user]\n{}\n", prompt.system, prompt.user);
    assert_eq!(rendered, golden("prompt_fn-02.txt"));
}

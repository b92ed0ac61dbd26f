use ocrrag_core::corpus::{fixture_dir, read_pages, Corpus};
use ocrrag_core::metrics::r_noise;
use ocrrag_core::EvalReport;
use std::path::Path;
use std::process::{Command, Output};

fn ocrrag(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocrrag"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn corpus_arg() -> String {
    fixture_dir().to_string_lossy().into_owned()
}

#[test]
fn perturb_then_rnoise_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus_arg();
    ok(ocrrag(
        &[
            "perturb-fmt",
            "--pages",
            &corpus,
            "--rate",
            "0.3",
            "--out",
            "noisy.jsonl",
        ],
        tmp.path(),
    ));
    let pages = read_pages(&tmp.path().join("noisy.jsonl")).unwrap();
    assert_eq!(pages.len(), Corpus::fixture().unwrap().pages.len());
    assert!(pages
        .iter()
        .all(|p| p.extra["noise"] == "fmt" && p.extra["rate"] == 0.3));

    let printed = ok(ocrrag(
        &["rnoise", "--pages", "noisy.jsonl", "--qas", &corpus],
        tmp.path(),
    ));
    let qas = Corpus::fixture().unwrap().qas;
    let want = r_noise(&qas, &ocrrag_core::corpus::page_map(&pages)).unwrap();
    assert_eq!(printed.trim(), format!("{want:.6}"));
    assert!(want > 0.0);
}

#[test]
fn kb_and_retrieval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus_arg();
    ok(ocrrag(
        &["build-kb", "--pages", &corpus, "--out", "kb"],
        tmp.path(),
    ));
    assert!(tmp.path().join("kb/finance.json").exists());
    let table = ok(ocrrag(
        &[
            "eval-retrieval",
            "--kb-dir",
            "kb",
            "--qas",
            &corpus,
            "--retriever",
            "oracle",
            "--out",
            "r.json",
        ],
        tmp.path(),
    ));
    assert!(table.contains("retrieval"));
    let report: EvalReport =
        serde_json::from_slice(&std::fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report.overall, 1.0);
    assert_eq!(report.n_qas, Corpus::fixture().unwrap().qas.len());

    let rendered = ok(ocrrag(&["report", "r.json"], tmp.path()));
    assert!(rendered
        .lines()
        .nth(1)
        .unwrap()
        .trim_end()
        .ends_with("100.0"));
}

#[test]
fn e2e_with_mock_and_offline_score() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus_arg();
    ok(ocrrag(
        &["build-kb", "--pages", &corpus, "--out", "kb"],
        tmp.path(),
    ));
    let json = ok(ocrrag(
        &[
            "eval-e2e",
            "--kb-dir",
            "kb",
            "--qas",
            &corpus,
            "--retriever",
            "oracle",
            "--mock",
            "gold-echo",
        ],
        tmp.path(),
    ));
    let report: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report.overall, 1.0);

    std::fs::write(
        tmp.path().join("preds.jsonl"),
        "{\"qa_id\":\"fn-02\",\"response\":\"<response>14 cents per share</response>\"}\n",
    )
    .unwrap();
    let json = ok(ocrrag(
        &[
            "score",
            "--predictions",
            "preds.jsonl",
            "--qas",
            &corpus,
            "--stage",
            "generation",
        ],
        tmp.path(),
    ));
    let scored: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(scored.score_of("fn-02").unwrap().metric, 1.0);
}

#[test]
fn image_perturbation_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let page = ocrrag_core::imgnoise::synthetic_page(1, 80, 100);
    ocrrag_core::imgnoise::save_png(&page, &tmp.path().join("p.png")).unwrap();
    for name in ["a.png", "b.png"] {
        ok(ocrrag(
            &[
                "perturb-img",
                "--input",
                "p.png",
                "--out",
                name,
                "--mode",
                "two-random",
                "--seed",
                "9",
            ],
            tmp.path(),
        ));
    }
    let a = std::fs::read(tmp.path().join("a.png")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b.png")).unwrap());
}

#[test]
fn image_directory_gets_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("pages")).unwrap();
    for (i, name) in ["b.png", "a.png"].iter().enumerate() {
        let page = ocrrag_core::imgnoise::synthetic_page(i as u64, 60, 80);
        ocrrag_core::imgnoise::save_png(&page, &tmp.path().join("pages").join(name)).unwrap();
    }
    ok(ocrrag(
        &[
            "perturb-img",
            "--in",
            "pages",
            "--out",
            "noisy",
            "--mode",
            "one-weak",
            "--seed",
            "3",
        ],
        tmp.path(),
    ));
    let lines = std::fs::read_to_string(tmp.path().join("noisy/provenance.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = lines
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["page"], "a.png");
    assert_eq!(rows[0]["specs"].as_array().unwrap().len(), 1);
    assert!(tmp.path().join("noisy/b.png").exists());
}

#[test]
fn qa_filter_writes_kept_subset() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus_arg();
    let summary = ok(ocrrag(
        &[
            "qa-filter",
            "--qas",
            &corpus,
            "--out",
            "kept.jsonl",
            "--report",
            "f.json",
        ],
        tmp.path(),
    ));
    assert!(summary.starts_with("kept "));
    let kept = ocrrag_core::corpus::read_qas(&tmp.path().join("kept.jsonl")).unwrap();
    assert!(!kept.is_empty() && kept.len() <= Corpus::fixture().unwrap().qas.len());
}

#[test]
fn bad_invocations_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus_arg();
    let out = ocrrag(
        &["eval-gen", "--pages", &corpus, "--qas", &corpus],
        tmp.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--mock"));

    let out = ocrrag(
        &[
            "perturb-fmt",
            "--pages",
            &corpus,
            "--rate",
            "1.5",
            "--out",
            "x.jsonl",
        ],
        tmp.path(),
    );
    assert!(!out.status.success());

    let out = ocrrag(
        &[
            "perturb-img",
            "--input",
            "p.png",
            "--out",
            "q.png",
            "--kind",
            "smudge",
        ],
        tmp.path(),
    );
    assert!(!out.status.success());
}

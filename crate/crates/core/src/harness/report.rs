use super::{EvalReport, HarnessError, SweepRow};
use crate::docmodel::{EvidenceSource, PageKey, QaRecord};
use crate::metrics::{lcs_score, qa_context, UNAFFECTED_LCS};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub correct: usize,
    pub incorrect: usize,
}

impl BreakdownRow {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect
    }
}

/// QAs split by whether OCR noise damaged their evidence and by whether the
/// answer was right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub f1_threshold: f64,
    pub ocr_affected: BreakdownRow,
    pub unaffected: BreakdownRow,
}

impl ErrorBreakdown {
    pub fn total(&self) -> usize {
        self.ocr_affected.total() + self.unaffected.total()
    }

    /// Share of QAs in the affected row; equals `r_noise` on the same pages.
    pub fn affected_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.ocr_affected.total() as f64 / n as f64,
        }
    }

    pub fn unaffected_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.unaffected.total() as f64 / n as f64,
        }
    }
}

/// Counts every scored QA of `report` into the 2x2 table. A QA is affected
/// when its evidence LCS on the perturbed pages is at most 0.95, and correct
/// when its score reaches `f1_threshold`.
pub fn error_breakdown(
    report: &EvalReport,
    qas: &[QaRecord],
    perturbed_pages: &HashMap<PageKey, String>,
    f1_threshold: f64,
) -> Result<ErrorBreakdown, HarnessError> {
    let by_id: HashMap<&str, &QaRecord> = qas.iter().map(|q| (q.qa_id.as_str(), q)).collect();
    let mut out = ErrorBreakdown {
        f1_threshold,
        ocr_affected: BreakdownRow::default(),
        unaffected: BreakdownRow::default(),
    };
    for s in &report.per_qa {
        let Some(qa) = by_id.get(s.qa_id.as_str()) else {
            continue;
        };
        let context = qa_context(qa, perturbed_pages)?;
        let row = if lcs_score(&qa.evidence, &context)? <= UNAFFECTED_LCS {
            &mut out.ocr_affected
        } else {
            &mut out.unaffected
        };
        if s.metric >= f1_threshold {
            row.correct += 1;
        } else {
            row.incorrect += 1;
        }
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", x * 100.0))
}

/// Plain-text table with one row per report and columns
/// `TXT TAB FOR CHA RO ALL`, in percent.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}  {:<10}", "run", "stage");
    for s in EvidenceSource::ALL {
        let _ = write!(out, " {:>6}", s.as_str());
    }
    let _ = writeln!(out, " {:>6}", "ALL");
    for (label, r) in rows {
        let _ = write!(out, "{label:<width$}  {:<10}", r.stage.as_str());
        for s in EvidenceSource::ALL {
            let _ = write!(out, " {:>6}", cell(r.by_source.get(&s).copied()));
        }
        let _ = writeln!(out, " {:>6}", cell(Some(r.overall)));
    }
    out
}

/// One CSV line per sweep row, for plotting score against noise level.
pub fn reports_to_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("noise,rate,retriever,stage,r_noise,TXT,TAB,FOR,CHA,RO,ALL,errors\n");
    for row in rows {
        let r = &row.report;
        let _ = write!(
            out,
            "{},{},{},{},{:.6}",
            row.noise,
            row.rate,
            row.retriever,
            r.stage.as_str(),
            row.r_noise
        );
        for s in EvidenceSource::ALL {
            match r.by_source.get(&s) {
                Some(v) => {
                    let _ = write!(out, ",{v:.6}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:.6},{}", r.overall, r.n_errors);
    }
    out
}

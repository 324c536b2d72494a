//! Multi-label scoring of final decisions.
//!
//! Metrics are percentages. Any ratio with a zero denominator is 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::FinalDecision;
use crate::case_model::DiagnosisOptions;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseScore {
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

impl std::ops::Add for CaseScore {
    type Output = CaseScore;
    fn add(self, o: CaseScore) -> CaseScore {
        CaseScore { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl CaseScore {
    pub fn metrics(&self) -> Metrics {
        let p = precision(self.tp, self.fp);
        let r = recall(self.tp, self.fn_);
        Metrics { precision: p, recall: r, f1: f1(p, r) }
    }
}

pub fn score_letters(selected: &BTreeSet<String>, gold: &BTreeSet<String>) -> CaseScore {
    CaseScore {
        tp: selected.intersection(gold).count() as u32,
        fp: selected.difference(gold).count() as u32,
        fn_: gold.difference(selected).count() as u32,
    }
}

pub fn score_case(decision: &FinalDecision, options: &DiagnosisOptions) -> CaseScore {
    let selected: BTreeSet<String> = decision.selected_letters.iter().cloned().collect();
    score_letters(&selected, &options.gold_letters())
}

pub fn precision(tp: u32, fp: u32) -> f64 {
    ratio(tp, tp + fp)
}

pub fn recall(tp: u32, fn_: u32) -> f64 {
    ratio(tp, tp + fn_)
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * f64::from(num) / f64::from(den)
    }
}

/// Harmonic mean of two percentages.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanScores {
    pub relevance: f64,
    pub completeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub score: CaseScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_case: Vec<CaseRow>,
    pub totals: CaseScore,
    pub micro: Metrics,
    pub macro_avg: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<f64>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
    #[error("reading {path}: {reason}")]
    Import { path: String, reason: String },
    #[error("human scores, row {row}: {reason}")]
    BadScore { row: usize, reason: String },
}

/// Micro metrics from summed counters, plus the per-case macro mean.
pub fn aggregate(scores: &[(String, CaseScore)]) -> Result<EvalReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    let totals = scores.iter().fold(CaseScore::default(), |acc, (_, s)| acc + *s);
    let n = scores.len() as f64;
    let per: Vec<Metrics> = scores.iter().map(|(_, s)| s.metrics()).collect();
    let macro_avg = Metrics {
        precision: per.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per.iter().map(|m| m.f1).sum::<f64>() / n,
    };
    Ok(EvalReport {
        per_case: scores.iter().map(|(id, s)| CaseRow { case_id: id.clone(), score: *s }).collect(),
        totals,
        micro: totals.metrics(),
        macro_avg,
        relevance: None,
        completeness: None,
    })
}

#[derive(Debug, Deserialize)]
struct HumanRow {
    case_id: String,
    relevance: f64,
    completeness: f64,
}

/// Reads `case_id,relevance,completeness` rows; scores must lie in [0, 5].
pub fn load_human_scores(path: &Path) -> Result<BTreeMap<String, HumanScores>, EvalError> {
    let import_err = |reason: String| EvalError::Import { path: path.display().to_string(), reason };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| import_err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<HumanRow>().enumerate() {
        let row = row.map_err(|e| EvalError::BadScore { row: i + 1, reason: e.to_string() })?;
        for (name, v) in [("relevance", row.relevance), ("completeness", row.completeness)] {
            if !(0.0..=5.0).contains(&v) {
                return Err(EvalError::BadScore { row: i + 1, reason: format!("{name} {v} outside 0..=5") });
            }
        }
        out.insert(row.case_id, HumanScores { relevance: row.relevance, completeness: row.completeness });
    }
    Ok(out)
}

fn one_decimal(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl EvalReport {
    /// Attaches batch means of the human scores for cases in this report.
    /// Cases without a human row are ignored; no matching rows leaves the fields empty.
    pub fn with_human_scores(mut self, scores: &BTreeMap<String, HumanScores>) -> Self {
        let matched: Vec<&HumanScores> = self.per_case.iter().filter_map(|row| scores.get(&row.case_id)).collect();
        if !matched.is_empty() {
            let n = matched.len() as f64;
            self.relevance = Some(one_decimal(matched.iter().map(|s| s.relevance).sum::<f64>() / n));
            self.completeness = Some(one_decimal(matched.iter().map(|s| s.completeness).sum::<f64>() / n));
        }
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table with the P.(%) / R.(%) / F1(%) / Relevance / Completeness columns.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>10} {:>13}",
            "Average", "P.(%)", "R.(%)", "F1(%)", "Relevance", "Completeness"
        );
        for (name, m, rel, comp) in [
            ("micro", self.micro, opt(self.relevance), opt(self.completeness)),
            ("macro", self.macro_avg, "-".to_string(), "-".to_string()),
        ] {
            let _ = writeln!(
                out,
                "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>10} {:>13}",
                name, m.precision, m.recall, m.f1, rel, comp
            );
        }
        let t = self.totals;
        let _ = writeln!(out, "cases={} tp={} fp={} fn={}", self.per_case.len(), t.tp, t.fp, t.fn_);
        out
    }
}

//! Evidence trees: diagnosis → analysis → evidence.
//!
//! A tree is what every agent emits. It has a free-text title and an ordered
//! list of diagnosis entries; each entry carries exactly one analysis
//! paragraph and at least one numbered evidence item. This module parses the
//! (loosely formatted) text a model produces, renders trees back to a
//! canonical indented form, validates the structural rules and implements
//! label-keyed merge and diff.

mod merge;
mod parse;
mod render;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::text::normalize_label;

pub use merge::{diff_trees, merge_trees, ConflictSet};
pub use parse::{parse_tree, ParseError};
pub use render::render_tree;
pub(crate) use render::render_unchecked;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceTree {
    pub title: String,
    pub entries: Vec<DiagnosisEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisEntry {
    pub disease: String,
    pub analysis: String,
    #[serde(serialize_with = "evidence_as_strings", deserialize_with = "evidence_from_strings")]
    pub evidence: Vec<EvidenceItem>,
}

/// One leaf of the tree. `index` is 1-based, as emitted (`Evidence 1:`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceItem {
    pub index: u32,
    pub text: String,
}

fn evidence_as_strings<S: Serializer>(items: &[EvidenceItem], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(items.iter().map(|item| item.text.as_str()))
}

fn evidence_from_strings<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<EvidenceItem>, D::Error> {
    let texts = Vec::<String>::deserialize(d)?;
    Ok(EvidenceItem::numbered(texts))
}

impl EvidenceItem {
    /// Numbers a list of texts 1..=n.
    pub fn numbered<I, S>(texts: I) -> Vec<EvidenceItem>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| EvidenceItem { index: i as u32 + 1, text: text.into() })
            .collect()
    }
}

impl DiagnosisEntry {
    pub fn new<I, S>(disease: impl Into<String>, analysis: impl Into<String>, evidence: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        DiagnosisEntry {
            disease: disease.into(),
            analysis: analysis.into(),
            evidence: EvidenceItem::numbered(evidence),
        }
    }

    pub fn normalized_label(&self) -> String {
        normalize_label(&self.disease)
    }
}

impl EvidenceTree {
    pub fn new(title: impl Into<String>, entries: Vec<DiagnosisEntry>) -> Self {
        EvidenceTree { title: title.into(), entries }
    }

    /// Normalized disease labels present in this tree.
    pub fn labels(&self) -> BTreeSet<String> {
        self.entries.iter().map(DiagnosisEntry::normalized_label).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("tree serializes")
    }
}

impl fmt::Display for EvidenceTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render::render_unchecked(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyTitle,
    NoEntries,
    EmptyLabel,
    EmptyAnalysis,
    NoEvidence,
    EmptyEvidence,
    NonContiguousIndex,
    DuplicateLabel,
    /// Text that the parser would not read back verbatim (surrounding
    /// whitespace, line breaks, list markers, keyword prefixes).
    NonCanonicalText,
}

/// One broken invariant. `entry` is the 0-based entry position when the
/// violation belongs to an entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entry: Option<usize>,
    pub label: Option<String>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.entry, &self.label) {
            (Some(i), Some(label)) => write!(f, "entry {} ({label:?}): {:?}", i + 1, self.rule),
            (Some(i), None) => write!(f, "entry {}: {:?}", i + 1, self.rule),
            _ => write!(f, "tree: {:?}", self.rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid evidence tree: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

/// Checks every structural invariant; empty result means the tree is valid.
pub fn validate_tree(tree: &EvidenceTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let tree_level = |rule| Violation { entry: None, label: None, rule };

    if tree.title.trim().is_empty() {
        out.push(tree_level(Rule::EmptyTitle));
    } else if !parse::is_canonical_heading(&tree.title) {
        out.push(tree_level(Rule::NonCanonicalText));
    }
    if tree.entries.is_empty() {
        out.push(tree_level(Rule::NoEntries));
    }

    let mut seen = BTreeSet::new();
    for (i, entry) in tree.entries.iter().enumerate() {
        let mut push = |rule| {
            out.push(Violation { entry: Some(i), label: Some(entry.disease.clone()), rule })
        };
        let label = entry.normalized_label();
        if label.is_empty() {
            push(Rule::EmptyLabel);
        } else {
            if !parse::is_canonical_heading(&entry.disease) {
                push(Rule::NonCanonicalText);
            }
            if !seen.insert(label) {
                push(Rule::DuplicateLabel);
            }
        }
        if entry.analysis.trim().is_empty() {
            push(Rule::EmptyAnalysis);
        } else if !parse::is_canonical_body(&entry.analysis) {
            push(Rule::NonCanonicalText);
        }
        if entry.evidence.is_empty() {
            push(Rule::NoEvidence);
        }
        for (k, item) in entry.evidence.iter().enumerate() {
            if item.index as usize != k + 1 {
                push(Rule::NonContiguousIndex);
                break;
            }
        }
        for item in &entry.evidence {
            if item.text.trim().is_empty() {
                push(Rule::EmptyEvidence);
            } else if !parse::is_canonical_body(&item.text) {
                push(Rule::NonCanonicalText);
            }
        }
    }
    out
}

pub(crate) fn ensure_valid(tree: &EvidenceTree) -> Result<(), ValidationError> {
    let violations = validate_tree(tree);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationError { violations })
    }
}

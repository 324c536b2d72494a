use std::collections::{BTreeSet, HashMap, HashSet};

use serde::Serialize;

use super::{ensure_valid, DiagnosisEntry, EvidenceItem, EvidenceTree, ValidationError};
use crate::text::normalize_label;

/// Label-level partition of two trees. All labels are normalized.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConflictSet {
    pub only_in_left: BTreeSet<String>,
    pub only_in_right: BTreeSet<String>,
    pub shared: BTreeSet<String>,
}

impl ConflictSet {
    /// Whether either side proposes a diagnosis the other does not.
    pub fn has_conflict(&self) -> bool {
        !self.only_in_left.is_empty() || !self.only_in_right.is_empty()
    }
}

pub fn diff_trees(left: &EvidenceTree, right: &EvidenceTree) -> ConflictSet {
    let l = left.labels();
    let r = right.labels();
    ConflictSet {
        only_in_left: l.difference(&r).cloned().collect(),
        only_in_right: r.difference(&l).cloned().collect(),
        shared: l.intersection(&r).cloned().collect(),
    }
}

struct Accumulator {
    disease: String,
    analyses: Vec<String>,
    analysis_keys: HashSet<String>,
    evidence: Vec<String>,
    evidence_keys: HashSet<String>,
}

fn attributed(source: &str, analysis: &str) -> String {
    // Analyses coming out of an earlier merge already carry their sources.
    if analysis.starts_with('[') && analysis.contains("] ") {
        analysis.to_string()
    } else {
        format!("[{source}] {analysis}")
    }
}

/// Lossless union of trees keyed by normalized disease label.
///
/// Entries appear in first-appearance order across the inputs. For a label
/// present in several trees, each distinct analysis is kept with a
/// `[source title]` prefix and evidence lists are concatenated with
/// duplicates (by normalized text) removed.
pub fn merge_trees(trees: &[EvidenceTree], title: &str) -> Result<EvidenceTree, ValidationError> {
    for tree in trees {
        ensure_valid(tree)?;
    }
    let mut order: Vec<Accumulator> = Vec::new();
    let mut by_label: HashMap<String, usize> = HashMap::new();

    for tree in trees {
        for entry in &tree.entries {
            let key = entry.normalized_label();
            let slot = *by_label.entry(key).or_insert_with(|| {
                order.push(Accumulator {
                    disease: entry.disease.clone(),
                    analyses: Vec::new(),
                    analysis_keys: HashSet::new(),
                    evidence: Vec::new(),
                    evidence_keys: HashSet::new(),
                });
                order.len() - 1
            });
            let acc = &mut order[slot];
            let analysis = attributed(&tree.title, &entry.analysis);
            if acc.analysis_keys.insert(normalize_label(&analysis)) {
                acc.analyses.push(analysis);
            }
            for item in &entry.evidence {
                if acc.evidence_keys.insert(normalize_label(&item.text)) {
                    acc.evidence.push(item.text.clone());
                }
            }
        }
    }

    let entries = order
        .into_iter()
        .map(|acc| DiagnosisEntry {
            disease: acc.disease,
            analysis: acc.analyses.join(" "),
            evidence: EvidenceItem::numbered(acc.evidence),
        })
        .collect();
    Ok(EvidenceTree { title: title.to_string(), entries })
}

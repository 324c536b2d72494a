use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CaseRecord;
use crate::text::normalize_label;

/// Department → candidate disease labels, used to draw distractors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelPool(pub BTreeMap<String, Vec<String>>);

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("label pool is not a JSON object of label arrays: {0}")]
    Malformed(String),
    #[error("department {0:?} has no labels")]
    EmptyDepartment(String),
}

impl LabelPool {
    /// Builds a pool, dropping labels that repeat after normalization.
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self, PoolError> {
        let mut out = BTreeMap::new();
        for (department, labels) in map {
            let mut seen = BTreeSet::new();
            let kept: Vec<String> = labels
                .into_iter()
                .filter(|l| {
                    let key = normalize_label(l);
                    !key.is_empty() && seen.insert(key)
                })
                .collect();
            if kept.is_empty() {
                return Err(PoolError::EmptyDepartment(department));
            }
            out.insert(department, kept);
        }
        Ok(LabelPool(out))
    }

    /// Labels for a department, matched by normalized name.
    pub fn department(&self, name: &str) -> Option<&[String]> {
        let key = normalize_label(name);
        self.0
            .iter()
            .find(|(d, _)| normalize_label(d) == key)
            .map(|(_, labels)| labels.as_slice())
    }
}

pub fn load_label_pool(path: &Path) -> Result<LabelPool, PoolError> {
    let text = fs::read_to_string(path).map_err(|source| PoolError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| PoolError::Malformed(e.to_string()))?;
    LabelPool::new(map)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionItem {
    pub letter: String,
    pub label: String,
    pub is_gold: bool,
}

/// Lettered candidate list shown to the moderator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisOptions {
    pub items: Vec<OptionItem>,
}

impl DiagnosisOptions {
    pub fn letters(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.letter.as_str())
    }

    pub fn gold_letters(&self) -> BTreeSet<String> {
        self.items.iter().filter(|i| i.is_gold).map(|i| i.letter.clone()).collect()
    }

    pub fn contains(&self, letter: &str) -> bool {
        self.items.iter().any(|i| i.letter == letter)
    }

    /// Position of a letter in option order, for sorting selections.
    pub fn position(&self, letter: &str) -> Option<usize> {
        self.items.iter().position(|i| i.letter == letter)
    }

    /// One `X. label` line per option, as inserted into the final-decision prompt.
    pub fn render(&self) -> String {
        self.items
            .iter()
            .map(|i| format!("{}. {}", i.letter, i.label))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A, B, ..., Z, AA, AB, ... for 0, 1, ..., 25, 26, 27, ...
pub fn option_letter(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        let rem = (n - 1) % 26;
        out.push(b'A' + rem as u8);
        n = (n - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

pub fn default_distractor_count(case: &CaseRecord) -> usize {
    case.gold_labels.len().max(3)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptionsError {
    #[error("department {department:?} has {available} eligible distractors, {needed} needed")]
    PoolTooSmall { department: String, needed: usize, available: usize },
    #[error("at least one distractor is required")]
    NoDistractors,
}

/// Gold labels plus `distractor_count` same-department labels drawn with
/// `seed`, shuffled by the same generator and lettered in final order.
pub fn build_options(
    case: &CaseRecord,
    pool: &LabelPool,
    distractor_count: usize,
    seed: u64,
) -> Result<DiagnosisOptions, OptionsError> {
    if distractor_count == 0 {
        return Err(OptionsError::NoDistractors);
    }
    let gold: BTreeSet<String> = case.gold_labels.iter().map(|l| normalize_label(l)).collect();
    let eligible: Vec<&String> = pool
        .department(&case.department)
        .unwrap_or_default()
        .iter()
        .filter(|l| !gold.contains(&normalize_label(l)))
        .collect();
    if eligible.len() < distractor_count {
        return Err(OptionsError::PoolTooSmall {
            department: case.department.clone(),
            needed: distractor_count,
            available: eligible.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, eligible.len(), distractor_count).into_vec();
    chosen.sort_unstable();

    let mut items: Vec<(String, bool)> = case.gold_labels.iter().map(|l| (l.clone(), true)).collect();
    items.extend(chosen.into_iter().map(|i| (eligible[i].clone(), false)));
    items.shuffle(&mut rng);

    Ok(DiagnosisOptions {
        items: items
            .into_iter()
            .enumerate()
            .map(|(i, (label, is_gold))| OptionItem { letter: option_letter(i), label, is_gold })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::sample_case;
    use super::*;

    fn pool() -> LabelPool {
        LabelPool::new(BTreeMap::from([(
            "Gastrointestinal Surgery".to_string(),
            ["Gastric cancer", "Anemia", "Cholelithiasis", "Hepatic cyst", "Colon polyp", "Appendicitis"]
                .map(String::from)
                .to_vec(),
        )]))
        .unwrap()
    }

    #[test]
    fn letters_are_bijective_base_26() {
        assert_eq!(option_letter(0), "A");
        assert_eq!(option_letter(25), "Z");
        assert_eq!(option_letter(26), "AA");
        assert_eq!(option_letter(27), "AB");
        assert_eq!(option_letter(701), "ZZ");
        assert_eq!(option_letter(702), "AAA");
    }

    #[test]
    fn two_gold_two_distractors() {
        let options = build_options(&sample_case(), &pool(), 2, 11).unwrap();
        assert_eq!(options.items.len(), 4);
        assert_eq!(options.items.iter().filter(|i| i.is_gold).count(), 2);
        let letters: Vec<_> = options.letters().collect();
        assert_eq!(letters, ["A", "B", "C", "D"]);
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = build_options(&sample_case(), &pool(), 3, 5).unwrap();
        let b = build_options(&sample_case(), &pool(), 3, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_pool_reports_counts() {
        let err = build_options(&sample_case(), &pool(), 5, 1).unwrap_err();
        assert_eq!(
            err,
            OptionsError::PoolTooSmall {
                department: "Gastrointestinal Surgery".into(),
                needed: 5,
                available: 4
            }
        );
        assert_eq!(build_options(&sample_case(), &pool(), 0, 1).unwrap_err(), OptionsError::NoDistractors);
    }

    #[test]
    fn department_lookup_is_normalized() {
        assert!(pool().department("gastrointestinal  surgery").is_some());
        assert!(pool().department("oncology").is_none());
    }

    #[test]
    fn empty_department_is_rejected() {
        let err = LabelPool::new(BTreeMap::from([("x".to_string(), vec![])])).unwrap_err();
        assert!(matches!(err, PoolError::EmptyDepartment(_)));
    }
}

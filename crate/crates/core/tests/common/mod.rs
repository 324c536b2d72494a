//! Oracles and generators shared by the integration tests. Nothing here calls
//! into the code under test except to read plain data types.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Mutex;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use tor_core::evidence_tree::{DiagnosisEntry, EvidenceTree};
use tor_core::orchestrator::RunConfig;
use tor_core::agents::TargetSelection;
use tor_core::backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, ScriptedBackend};
use tor_core::scenario::Script;
use tor_core::AgentRole;

/// Deterministic runner: fixed seed, no failure files.
pub fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, max_shrink_iters: 256, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

// ---------------------------------------------------------------------------
// Labels

/// Case fold, collapse whitespace, strip trailing punctuation.
pub fn oracle_normalize(s: &str) -> String {
    let lower: String = s.chars().flat_map(char::to_lowercase).collect();
    let mut joined = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    while let Some(last) = joined.chars().last() {
        if !(".,;:!?。，；：！？、".contains(last) || last.is_whitespace()) {
            break;
        }
        joined.pop();
    }
    joined
}

// ---------------------------------------------------------------------------
// Tree generator

const HEAD_START: &[&str] = &[
    "Gastric", "Hepatic", "Renal", "Type", "Chronic", "Acute", "Breast", "Anemia", "Hypertension", "Cholecystitis",
    "Pneumonia", "Diabetes", "Lung", "Thyroid", "胃癌", "Réflux", "Colon",
];

const WORDS: &[&str] = &[
    "cancer", "of", "the", "left", "lobe", "mild", "chronic", "acute", "(T2N0)", "type", "2", "CEA", "12", "ng/mL", "Hb",
    "98", "g/L", "elevated", "BP:", "160/100", "mmHg", "3.5", "cm", "α-fetoprotein", "肝囊肿", "-", "/", "+", "grade", "II",
    "nodule,", "mass;", "findings.", "x", "e.g.", "#3", "1.", "stage", "IIIa", "with", "and", "Diagnosis", "–", "ratio:",
    "0.8", "(", ")", "→", "%", "pT1b", "N0", "M0", "≥", "5", "years",
];

fn phrase(min: usize, max: usize) -> impl Strategy<Value = String> {
    (prop::sample::select(HEAD_START), prop::collection::vec(prop::sample::select(WORDS), min..=max)).prop_map(
        |(head, rest)| {
            let mut words = vec![head];
            words.extend(rest);
            words.join(" ")
        },
    )
}

fn body(min: usize, max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select([HEAD_START, WORDS].concat()), min..=max).prop_map(|w| w.join(" "))
}

/// Structurally valid trees with distinct normalized labels.
pub fn tree_strategy() -> impl Strategy<Value = EvidenceTree> {
    let entry = (phrase(0, 4), body(1, 10), prop::collection::vec(body(1, 8), 1..=5));
    (phrase(0, 3), prop::collection::vec(entry, 1..=6)).prop_map(|(title, entries)| {
        let mut seen = BTreeSet::new();
        let entries = entries
            .into_iter()
            .filter(|(label, _, _)| seen.insert(oracle_normalize(label)))
            .map(|(label, analysis, evidence)| DiagnosisEntry::new(label, analysis, evidence))
            .collect();
        EvidenceTree::new(title, entries)
    })
}

/// Small label alphabet with case and spacing variants, so pairs overlap often.
const PAIR_LABELS: &[&str] = &[
    "Gastric cancer", "GASTRIC CANCER", "Gastric  cancer.", "Anemia", "anemia;", "Hypertension", "Hepatic cyst",
    "Hepatic Cyst", "Type 2 diabetes", "Pneumonia", "Cholecystitis", "Renal cyst",
];

pub fn overlapping_tree_strategy() -> impl Strategy<Value = EvidenceTree> {
    let entry = (prop::sample::select(PAIR_LABELS), body(1, 6), prop::collection::vec(body(1, 5), 1..=3));
    (prop::sample::select(HEAD_START), prop::collection::vec(entry, 1..=6)).prop_map(|(title, entries)| {
        let mut seen = BTreeSet::new();
        let entries = entries
            .into_iter()
            .filter(|(label, _, _)| seen.insert(oracle_normalize(label)))
            .map(|(label, analysis, evidence)| DiagnosisEntry::new(label, analysis, evidence))
            .collect();
        EvidenceTree::new(format!("{title} view"), entries)
    })
}

const PLAIN_CHARS: &[char] = &[
    'a', 'e', 'n', 's', 'x', 'E', 'R', 'Z', '0', '1', '4', '9', ' ', ' ', ',', '.', ':', ';', '(', ')', '/',
];

const FRAGMENTS: &[&str] = &[
    "Reasoning Pathway", "Analysis:", "analysis ：", "Evidence 1:", "Evidence:", "evidence 2: a, evidence 3: b", ".1", ".4 ",
    "├── ", "│   └─ ", "- ", "* ", "1. ", "## ", "**", "\t", "    ", "\n", "\r\n", "\u{a0}", "```",
];

/// Line fragments that exercise every layout the parser accepts, glued at random.
pub fn noisy_text_strategy() -> impl Strategy<Value = String> {
    let fragment = prop_oneof![
        6 => prop::sample::select(FRAGMENTS).prop_map(String::from),
        2 => prop::collection::vec(prop::sample::select(PLAIN_CHARS), 0..=12).prop_map(|c| c.into_iter().collect()),
        1 => any::<char>().prop_map(String::from),
    ];
    prop::collection::vec(fragment, 0..60).prop_map(|v| v.concat())
}

/// Arbitrary bytes decoded lossily, or structured noise.
pub fn fuzz_input_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::collection::vec(any::<u8>(), 0..400).prop_map(|b| String::from_utf8_lossy(&b).into_owned()),
        noisy_text_strategy(),
    ]
}

// ---------------------------------------------------------------------------
// BM25 oracle

#[derive(Debug, Clone)]
pub struct OracleDoc {
    pub id: String,
    pub body: String,
}

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            out.push(current.to_lowercase());
            current.clear();
        }
    }
    if !current.is_empty() {
        out.push(current.to_lowercase());
    }
    out
}

/// Scores every document against every distinct query term directly from the
/// raw text and returns the ids of the best `k` (score desc, id asc).
pub fn bm25_oracle(docs: &[OracleDoc], query: &str, k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| oracle_tokens(&d.body)).collect();
    let n = docs.len() as f64;
    let total: usize = tokenized.iter().map(Vec::len).sum();
    let avgdl = total as f64 / n;
    let terms: BTreeSet<String> = oracle_tokens(query).into_iter().collect();
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .zip(&tokenized)
        .map(|(doc, toks)| {
            let dl = toks.len() as f64;
            let score = terms
                .iter()
                .map(|term| {
                    let tf = toks.iter().filter(|t| *t == term).count() as f64;
                    if tf == 0.0 {
                        return 0.0;
                    }
                    let df = tokenized.iter().filter(|d| d.contains(term)).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
                })
                .sum::<f64>();
            (doc.id.clone(), score)
        })
        .collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    scored.truncate(k);
    scored
}

// ---------------------------------------------------------------------------
// Trace oracle

/// Calls a tag costs: the usable reply after `bad` unusable ones, capped by
/// the repair budget (a never-valid tag spends the whole budget).
fn attempts(script: &Script, tag: &str, budget: u32) -> u32 {
    if script.never_valid.contains(tag) {
        budget + 1
    } else {
        script.bad_replies.get(tag).copied().unwrap_or(0).min(budget) + 1
    }
}

/// Backend call tags a run must issue, in order, given the scripted answers.
///
/// Specialists act in fixed order; each turn every active specialist is asked
/// whether to speak (one yes/no re-prompt allowed), speakers address their
/// named peers, and after the turns of a round each addressed specialist
/// revises its tree once. The moderator decides last.
pub fn predict_tags(config: &RunConfig, script: &Script) -> Vec<String> {
    const ORDER: [AgentRole; 4] = [AgentRole::Outpatient, AgentRole::Laboratory, AgentRole::Radiology, AgentRole::Pathology];
    let roles: Vec<AgentRole> = ORDER.into_iter().filter(|r| config.active_roles.contains(r)).collect();
    let name = |r: AgentRole| format!("{r:?}").to_lowercase();
    let mut out = Vec::new();
    let mut emit = |tag: String, budget: u32| {
        for _ in 0..attempts(script, &tag, budget) {
            out.push(tag.clone());
        }
    };

    for &role in &roles {
        emit(format!("{}/initial", name(role)), config.repair_budget);
    }
    if config.cross_verification {
        for round in 1..=config.k {
            let mut addressed = BTreeSet::new();
            for turn in 1..=config.t {
                for &role in &roles {
                    emit(format!("{}/participate/{round}.{turn}", name(role)), 1);
                    let Some(answer) = script.answers.get(&(role, round, turn)) else { continue };
                    if !answer.participate {
                        continue;
                    }
                    if config.target_selection == TargetSelection::Prompted {
                        emit(format!("{}/targets/{round}.{turn}", name(role)), 0);
                    }
                    let targets: Vec<AgentRole> = roles
                        .iter()
                        .copied()
                        .filter(|t| *t != role && answer.targets.contains(t))
                        .collect();
                    assert!(!targets.is_empty(), "the oracle needs explicit targets for {role:?} at {round}.{turn}");
                    for target in targets {
                        emit(format!("{}/opinion-{}/{round}.{turn}", name(role), name(target)), 0);
                        addressed.insert(target);
                    }
                }
            }
            for &role in &roles {
                if addressed.contains(&role) {
                    emit(format!("{}/update/{round}", name(role)), config.repair_budget);
                }
            }
            if config.early_exit && addressed.is_empty() && round < config.k {
                break;
            }
        }
    }
    emit("moderator/final".to_string(), config.repair_budget);
    out
}

/// Brute-force confusion counts over every letter.
pub fn confusion_scan(letters: &[String], gold: &BTreeSet<String>, selected: &BTreeSet<String>) -> (u32, u32, u32) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for letter in letters {
        match (gold.contains(letter), selected.contains(letter)) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

/// First position where two tag sequences differ, for failure messages.
pub fn first_divergence(expected: &[String], actual: &[&str]) -> Option<(usize, String, String)> {
    let len = expected.len().max(actual.len());
    (0..len).find_map(|i| {
        let e = expected.get(i).map_or("<end>", String::as_str);
        let a = actual.get(i).copied().unwrap_or("<end>");
        (e != a).then(|| (i, e.to_string(), a.to_string()))
    })
}

// ---------------------------------------------------------------------------
// Corpus generator

const CORPUS_WORDS: &[&str] = &[
    "fever", "Fever", "cough", "CEA", "hepatic", "cyst", "gastric", "cancer", "anemia", "Hb", "98", "ct", "mass",
    "biopsy", "lobe", "pain", "胃癌", "nodule", "grade", "II",
];

/// Up to `max_docs` documents with unique shuffled ids and bodies drawn from a
/// small vocabulary, so ties and repeated terms are common.
pub fn corpus_strategy(max_docs: usize) -> impl Strategy<Value = Vec<OracleDoc>> {
    let body = prop::collection::vec(prop::sample::select(CORPUS_WORDS), 1..=12).prop_map(|w| w.join(" "));
    prop::collection::vec(body, 1..=max_docs).prop_flat_map(|bodies| {
        let ids: Vec<usize> = (0..bodies.len()).collect();
        (Just(bodies), Just(ids).prop_shuffle())
    })
    .prop_map(|(bodies, ids)| {
        bodies
            .into_iter()
            .zip(ids)
            .map(|(body, id)| OracleDoc { id: format!("doc-{id:03}"), body })
            .collect()
    })
}

/// Queries mix corpus words, punctuation and a word no document contains.
pub fn query_strategy() -> impl Strategy<Value = String> {
    let word = prop_oneof![9 => prop::sample::select(CORPUS_WORDS).prop_map(String::from), 1 => Just("absent".to_string())];
    prop::collection::vec(word, 1..=6).prop_map(|w| w.join(", "))
}

// ---------------------------------------------------------------------------
// Reference metrics and backend spy

/// Published (precision, recall, F1) triples, in percent.
pub const REFERENCE_ROWS: [(f64, f64, f64); 12] = [
    (88.89, 29.58, 44.39),
    (87.63, 27.61, 42.00),
    (88.21, 30.02, 44.80),
    (89.01, 31.59, 46.63),
    (87.96, 30.70, 45.51),
    (90.32, 34.04, 49.45),
    (79.23, 28.13, 41.52),
    (69.23, 25.62, 37.40),
    (92.08, 33.52, 49.15),
    (86.00, 32.31, 46.97),
    (94.23, 35.68, 51.76),
    (95.70, 46.60, 62.68),
];

/// Delegates to a scripted backend and keeps every request it saw.
pub struct Spy {
    pub inner: ScriptedBackend,
    pub seen: Mutex<Vec<ChatRequest>>,
}

impl ChatBackend for Spy {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}

impl Spy {
    pub fn new(inner: ScriptedBackend) -> Self {
        Spy { inner, seen: Mutex::new(Vec::new()) }
    }
}

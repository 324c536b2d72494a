//! Okapi BM25 over an in-memory inverted index.
//!
//! score(q, d) = Σ_{t ∈ q} IDF(t) · tf·(k1+1) / (tf + k1·(1 − b + b·dl/avgdl))
//! IDF(t) = ln((N − df + 0.5)/(df + 0.5) + 1)
//!
//! Query terms are deduplicated before summing, so term order and repetition
//! in the query do not change scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_corpus, tokenize, CorpusError, Document};

pub const INDEX_MAGIC: &str = "TORIDX1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub params: Bm25Params,
    /// term → (doc ordinal, term frequency), ordinals ascending.
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_length: f64,
    pub docs: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub title: String,
    pub score: f64,
    pub snippet: String,
}

impl Index {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_frequency(&self, term: &str, ordinal: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&(ordinal as u32), |&(o, _)| o).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }
}

pub fn index_corpus(docs: &[Document], params: Bm25Params) -> Result<Index, CorpusError> {
    check_corpus(docs)?;
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    for (ordinal, doc) in docs.iter().enumerate() {
        let tokens = tokenize(&doc.body);
        doc_lengths.push(tokens.len() as u32);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens {
            *counts.entry(token).or_default() += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push((ordinal as u32, tf));
        }
    }
    let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
    Ok(Index {
        params,
        postings,
        avg_doc_length: total as f64 / docs.len() as f64,
        doc_lengths,
        docs: docs.to_vec(),
    })
}

/// Smoothed inverse document frequency; never negative.
pub fn idf(n: usize, df: usize) -> f64 {
    let (n, df) = (n as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

fn query_terms(query: &str) -> BTreeSet<String> {
    tokenize(query).into_iter().collect()
}

fn score_terms(index: &Index, terms: &BTreeSet<String>, ordinal: usize) -> f64 {
    let Bm25Params { k1, b } = index.params;
    let dl = f64::from(index.doc_lengths[ordinal]);
    let norm = if index.avg_doc_length > 0.0 { dl / index.avg_doc_length } else { 0.0 };
    terms
        .iter()
        .map(|term| {
            let tf = f64::from(index.term_frequency(term, ordinal));
            if tf == 0.0 {
                return 0.0;
            }
            idf(index.len(), index.doc_frequency(term)) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
        })
        .sum()
}

pub fn bm25_score(index: &Index, query: &str, ordinal: usize) -> f64 {
    assert!(ordinal < index.len(), "ordinal {ordinal} out of range");
    score_terms(index, &query_terms(query), ordinal)
}

/// The `k` best documents, ordered by score descending then doc id ascending.
/// Documents that share no term with the query are still ranked (score 0).
pub fn retrieve_top_k(index: &Index, query: &str, k: usize, snippet_tokens: usize) -> Vec<RetrievedDoc> {
    let terms = query_terms(query);
    let mut scores = vec![0.0f64; index.len()];
    for term in &terms {
        if let Some(postings) = index.postings.get(term) {
            for &(ordinal, _) in postings {
                scores[ordinal as usize] = score_terms(index, &terms, ordinal as usize);
            }
        }
    }
    let mut ranked: Vec<usize> = (0..index.len()).collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| index.docs[a].id.cmp(&index.docs[b].id))
    });
    ranked
        .into_iter()
        .take(k)
        .map(|ordinal| {
            let doc = &index.docs[ordinal];
            RetrievedDoc {
                doc_id: doc.id.clone(),
                title: doc.title.clone(),
                score: scores[ordinal],
                snippet: super::truncate_tokens(&doc.body, snippet_tokens),
            }
        })
        .collect()
}

/// Writes `TORIDX1\n` followed by the JSON index.
pub fn save_index(path: &Path, index: &Index) -> Result<(), CorpusError> {
    let mut out = format!("{INDEX_MAGIC}\n");
    out.push_str(&serde_json::to_string(index).expect("index serializes"));
    out.push('\n');
    fs::write(path, out).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

pub fn load_index(path: &Path) -> Result<Index, CorpusError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let body = text
        .strip_prefix(INDEX_MAGIC)
        .and_then(|rest| rest.strip_prefix('\n'))
        .ok_or_else(|| CorpusError::BadIndex(format!("missing {INDEX_MAGIC} header")))?;
    serde_json::from_str(body).map_err(|e| CorpusError::BadIndex(e.to_string()))
}

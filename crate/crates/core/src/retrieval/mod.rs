//! BM25 retrieval over local corpora.

mod index;
mod query;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{
    bm25_score, idf, index_corpus, load_index, retrieve_top_k, save_index, Bm25Params, Index,
    RetrievedDoc, INDEX_MAGIC,
};
pub use query::{
    build_query, format_retrieved, truncate_tokens, RetrievalSet, NO_REFERENCES,
    QUERY_TOKEN_BUDGET, SNIPPET_TOKEN_BUDGET,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("document {0:?} has an empty body")]
    EmptyBody(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("index file: {0}")]
    BadIndex(String),
}

/// Lower-cases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn check_corpus(docs: &[Document]) -> Result<(), CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut ids = HashSet::new();
    for doc in docs {
        if !ids.insert(doc.id.as_str()) {
            return Err(CorpusError::DuplicateId(doc.id.clone()));
        }
        if doc.body.trim().is_empty() {
            return Err(CorpusError::EmptyBody(doc.id.clone()));
        }
    }
    Ok(())
}

/// Reads a JSONL corpus of `{id, title, body}` objects. Blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line)
            .map_err(|e| CorpusError::Malformed { line: i + 1, reason: e.to_string() })?;
        docs.push(doc);
    }
    check_corpus(&docs)?;
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

pub fn corpus_to_jsonl(docs: &[Document]) -> String {
    docs.iter()
        .map(|d| serde_json::to_string(d).expect("document serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("CEA 12.4 ng/mL (elevated)"), ["cea", "12", "4", "ng", "ml", "elevated"]);
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn corpus_errors() {
        assert!(matches!(parse_corpus(""), Err(CorpusError::EmptyCorpus)));
        let dup = "{\"id\":\"a\",\"title\":\"t\",\"body\":\"x\"}\n{\"id\":\"a\",\"title\":\"t\",\"body\":\"y\"}";
        assert!(matches!(parse_corpus(dup), Err(CorpusError::DuplicateId(_))));
        let empty = "{\"id\":\"a\",\"title\":\"t\",\"body\":\" \"}";
        assert!(matches!(parse_corpus(empty), Err(CorpusError::EmptyBody(_))));
        assert!(matches!(parse_corpus("{oops"), Err(CorpusError::Malformed { line: 1, .. })));
    }
}

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, BackendProvider, ChatBackend, ChatRequest, ChatResponse, Usage};

/// One canned exchange. `tag` is a glob (`*` matches any run of characters)
/// checked against the request tag; `contains`, when set, must also occur in
/// the request text. `case_id` scopes the entry to one case of a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_digest: Option<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
}

impl TranscriptEntry {
    pub fn new(tag: impl Into<String>, response: impl Into<String>) -> Self {
        TranscriptEntry {
            tag: tag.into(),
            contains: None,
            request_digest: None,
            response: response.into(),
            case_id: None,
        }
    }

    pub fn for_case(mut self, case_id: impl Into<String>) -> Self {
        self.case_id = Some(case_id.into());
        self
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        glob_match(&self.tag, &request.tag)
            && self.contains.as_deref().is_none_or(|needle| request.full_text().contains(needle))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

impl Transcript {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Transcript { entries }
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| TranscriptError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(Transcript { entries })
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let text = fs::read_to_string(path)
            .map_err(|source| TranscriptError::Io { path: path.display().to_string(), source })?;
        Self::parse_jsonl(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), TranscriptError> {
        fs::write(path, self.to_jsonl())
            .map_err(|source| TranscriptError::Io { path: path.display().to_string(), source })
    }
}

/// `*` matches any (possibly empty) run of characters; everything else is literal.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut backtrack: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            backtrack = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((star, matched)) = backtrack {
            pi = star + 1;
            ti = matched + 1;
            backtrack = Some((star, matched + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Each request must match the next unconsumed entry.
    #[default]
    Strict,
    /// The first unconsumed matching entry wins; once all matching entries
    /// are consumed the first matching entry is reused.
    Lenient,
}

/// Replays a transcript. Matching is serialized behind a mutex so the
/// backend may be shared between threads.
pub struct ScriptedBackend {
    entries: Vec<(usize, TranscriptEntry)>,
    consumed: Mutex<Vec<bool>>,
    mode: MatchMode,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript, mode: MatchMode) -> Self {
        Self::from_indexed(transcript.entries.into_iter().enumerate().collect(), mode)
    }

    fn from_indexed(entries: Vec<(usize, TranscriptEntry)>, mode: MatchMode) -> Self {
        let consumed = Mutex::new(vec![false; entries.len()]);
        ScriptedBackend { entries, consumed, mode }
    }

    /// Entries that apply to `case_id`: those scoped to it plus unscoped ones.
    pub fn for_case(transcript: &Transcript, case_id: &str, mode: MatchMode) -> Self {
        let entries = transcript
            .entries
            .iter()
            .cloned()
            .enumerate()
            .filter(|(_, e)| e.case_id.as_deref().is_none_or(|c| c == case_id))
            .collect();
        Self::from_indexed(entries, mode)
    }

    /// Original transcript positions of entries consumed so far.
    pub fn consumed_positions(&self) -> BTreeSet<usize> {
        let consumed = self.consumed.lock().expect("scripted backend lock");
        self.entries
            .iter()
            .zip(consumed.iter())
            .filter(|(_, used)| **used)
            .map(|((pos, _), _)| *pos)
            .collect()
    }

    pub fn remaining(&self) -> usize {
        self.consumed.lock().expect("scripted backend lock").iter().filter(|c| !**c).count()
    }

    fn select(&self, request: &ChatRequest) -> Option<String> {
        let mut consumed = self.consumed.lock().expect("scripted backend lock");
        let chosen = match self.mode {
            MatchMode::Strict => consumed
                .iter()
                .position(|c| !c)
                .filter(|&i| self.entries[i].1.matches(request)),
            MatchMode::Lenient => (0..self.entries.len())
                .find(|&i| !consumed[i] && self.entries[i].1.matches(request))
                .or_else(|| (0..self.entries.len()).find(|&i| self.entries[i].1.matches(request))),
        }?;
        consumed[chosen] = true;
        Some(self.entries[chosen].1.response.clone())
    }
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let content = self
            .select(request)
            .ok_or_else(|| BackendError::Unmatched { tag: request.tag.clone() })?;
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: word_count(&request.full_text()),
                completion_tokens: word_count(&content),
            },
            content,
            latency_ms: 0,
        })
    }
}

/// Builds one [`ScriptedBackend`] per case from a shared transcript and
/// remembers them so unconsumed entries can be reported after a run.
pub struct ScriptedProvider {
    transcript: Arc<Transcript>,
    mode: MatchMode,
    issued: Mutex<Vec<Arc<ScriptedBackend>>>,
}

impl ScriptedProvider {
    pub fn new(transcript: Transcript, mode: MatchMode) -> Self {
        ScriptedProvider { transcript: Arc::new(transcript), mode, issued: Mutex::new(Vec::new()) }
    }

    /// Transcript positions no case consumed.
    pub fn unconsumed(&self) -> Vec<(usize, TranscriptEntry)> {
        let used: BTreeSet<usize> = self
            .issued
            .lock()
            .expect("provider lock")
            .iter()
            .flat_map(|b| b.consumed_positions())
            .collect();
        self.transcript
            .entries
            .iter()
            .cloned()
            .enumerate()
            .filter(|(i, _)| !used.contains(i))
            .collect()
    }
}

impl BackendProvider for ScriptedProvider {
    fn for_case(&self, case_id: &str) -> Arc<dyn ChatBackend> {
        let backend = Arc::new(ScriptedBackend::for_case(&self.transcript, case_id, self.mode));
        self.issued.lock().expect("provider lock").push(Arc::clone(&backend));
        backend
    }
}

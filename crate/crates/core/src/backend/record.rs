use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{BackendError, BackendProvider, ChatBackend, ChatRequest, ChatResponse, Transcript, TranscriptEntry};

/// Passes requests through and appends every successful exchange to a transcript.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    case_id: Option<String>,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, case_id: Option<String>) -> Self {
        RecordingBackend { inner, case_id, entries: Mutex::new(Vec::new()) }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript::new(self.entries.lock().expect("recording lock").clone())
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        self.entries.lock().expect("recording lock").push(TranscriptEntry {
            tag: request.tag.clone(),
            contains: None,
            request_digest: Some(request.digest()),
            response: response.content.clone(),
            case_id: self.case_id.clone(),
        });
        Ok(response)
    }
}

/// Wraps another provider and records each case's session separately.
pub struct RecordingProvider {
    inner: Arc<dyn BackendProvider>,
    sessions: Mutex<BTreeMap<String, Arc<RecordingBackend>>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn BackendProvider>) -> Self {
        RecordingProvider { inner, sessions: Mutex::new(BTreeMap::new()) }
    }

    /// Case-scoped transcript with sessions concatenated in `case_order`.
    pub fn transcript(&self, case_order: &[String]) -> Transcript {
        let sessions = self.sessions.lock().expect("recording lock");
        let entries = case_order
            .iter()
            .filter_map(|id| sessions.get(id))
            .flat_map(|s| s.transcript().entries)
            .collect();
        Transcript::new(entries)
    }
}

impl BackendProvider for RecordingProvider {
    fn for_case(&self, case_id: &str) -> Arc<dyn ChatBackend> {
        let backend = Arc::new(RecordingBackend::new(self.inner.for_case(case_id), Some(case_id.to_string())));
        self.sessions.lock().expect("recording lock").insert(case_id.to_string(), Arc::clone(&backend));
        backend
    }
}

//! Chat-completion backends.
//!
//! Every model call made by the engine goes through [`ChatBackend`]. The
//! remote backend speaks the OpenAI-compatible `/chat/completions` wire
//! format; the scripted backend replays a [`Transcript`] and is what the test
//! suite and offline demos run against. [`RecordingBackend`] captures a live
//! session into a transcript that the scripted backend can replay.

mod record;
mod remote;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::digest_hex;

pub use record::{RecordingBackend, RecordingProvider};
pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV};
pub use scripted::{
    glob_match, MatchMode, ScriptedBackend, ScriptedProvider, Transcript, TranscriptEntry,
    TranscriptError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: MessageRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: MessageRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: MessageRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Trace label, `<role>/<phase>[/<round>.<turn>]`.
    pub tag: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.last() {
            None => Err(BackendError::InvalidRequest("no messages".into())),
            Some(m) if m.role != MessageRole::User => {
                Err(BackendError::InvalidRequest("last message must come from the user".into()))
            }
            _ if self.temperature < 0.0 || !self.temperature.is_finite() => {
                Err(BackendError::InvalidRequest("temperature must be finite and non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 over the messages and sampling parameters (not the tag).
    pub fn digest(&self) -> String {
        let body = serde_json::json!({
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        digest_hex(body.to_string().as_bytes())
    }

    /// Concatenated message contents, used by content-substring matchers.
    pub fn full_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("no transcript entry matches request tagged {tag:?}")]
    Unmatched { tag: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Hands out the backend a given case should talk to.
pub trait BackendProvider: Send + Sync {
    fn for_case(&self, case_id: &str) -> Arc<dyn ChatBackend>;
}

/// The same backend for every case.
pub struct SharedProvider(pub Arc<dyn ChatBackend>);

impl BackendProvider for SharedProvider {
    fn for_case(&self, _case_id: &str) -> Arc<dyn ChatBackend> {
        Arc::clone(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let mut req = ChatRequest {
            messages: vec![Message::system("p"), Message::user("q")],
            temperature: 0.0,
            max_tokens: 16,
            tag: "outpatient/initial".into(),
        };
        assert!(req.validate().is_ok());
        req.messages.push(Message::assistant("a"));
        assert!(req.validate().is_err());
        req.messages.clear();
        assert!(req.validate().is_err());
    }

    #[test]
    fn digest_ignores_tag() {
        let a = ChatRequest { messages: vec![Message::user("q")], temperature: 0.0, max_tokens: 1, tag: "a".into() };
        let mut b = a.clone();
        b.tag = "b".into();
        assert_eq!(a.digest(), b.digest());
        b.messages[0].content.push('!');
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn transient_classification() {
        assert!(BackendError::Http { status: 429, body: String::new() }.is_transient());
        assert!(BackendError::Http { status: 503, body: String::new() }.is_transient());
        assert!(!BackendError::Http { status: 401, body: String::new() }.is_transient());
        assert!(BackendError::Timeout.is_transient());
    }
}

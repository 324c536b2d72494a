//! Append-only, totally ordered event log for one case run.

use serde::{Deserialize, Serialize};

use crate::text::digest_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Retrieval,
    Initial,
    Discussion,
    Update,
    Options,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// One backend request; `detail` is the attempt number within the repair loop.
    Call,
    Repair,
    Anomaly,
    TreeSnapshot,
    Opinion,
    Retrieved,
    OptionsBuilt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub phase: Phase,
    pub tag: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_digest: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        phase: Phase,
        tag: impl Into<String>,
        kind: EventKind,
        detail: Option<String>,
        payload: Option<&str>,
    ) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent {
            seq,
            phase,
            tag: tag.into(),
            kind,
            detail,
            payload_digest: payload.map(|p| digest_hex(p.as_bytes())),
        });
    }

    /// Appends another trace's events, renumbering them after ours.
    pub fn extend(&mut self, other: Trace) {
        for mut event in other.events {
            event.seq = self.events.len() as u64;
            self.events.push(event);
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Tags of every backend request, in issue order (repairs included).
    pub fn call_tags(&self) -> Vec<&str> {
        self.of_kind(EventKind::Call).map(|e| e.tag.as_str()).collect()
    }

    pub fn call_count(&self) -> usize {
        self.of_kind(EventKind::Call).count()
    }

    pub fn repair_count(&self) -> usize {
        self.of_kind(EventKind::Repair).count()
    }

    pub fn anomalies(&self) -> Vec<&TraceEvent> {
        self.of_kind(EventKind::Anomaly).collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }
}

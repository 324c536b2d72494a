//! Tree-of-reasoning multi-agent diagnosis.
//!
//! Four specialist agents (outpatient, laboratory, radiology, pathology) each
//! read their slice of a case record, optionally enriched with BM25-retrieved
//! reference text, and emit an evidence tree. They then cross-verify each
//! other for a bounded number of rounds and turns, update their trees from
//! the feedback they receive, and a moderator selects the final diagnosis
//! options together with a merged evidence tree. Runs are scored as
//! multi-label classification.
//!
//! The model is reached through [`backend::ChatBackend`]; the scripted
//! implementation replays recorded transcripts so whole runs are
//! reproducible byte for byte.

pub mod agents;
pub mod backend;
pub mod case_model;
pub mod evaluation;
pub mod evidence_tree;
pub mod orchestrator;
pub mod retrieval;
pub mod role;
pub mod scenario;
pub mod text;
pub mod trace;

pub use role::AgentRole;

//! The four specialists and the moderator.
//!
//! Each behavior renders a template, sends it through the backend, and parses
//! the reply. Tree-producing calls go through a bounded repair loop: a reply
//! that fails to parse is answered with a corrective user turn carrying the
//! parse error, up to `repair_budget` times, all under the original tag.

mod decision;
mod templates;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decision::{parse_decision, parse_letters, strip_fences, DecisionParseError, FinalDecision};
pub use templates::{TemplateError, TemplateSet, TEMPLATE_VERSION};

use crate::backend::{BackendError, ChatBackend, ChatRequest, Message};
use crate::case_model::{CaseRecord, DiagnosisOptions, RoleInput, Section};
use crate::evidence_tree::{diff_trees, parse_tree, render_unchecked, validate_tree, EvidenceTree};
use crate::retrieval::{format_retrieved, RetrievedDoc};
use crate::role::AgentRole;
use crate::trace::{EventKind, Phase, Trace};

/// Shown in place of a modality that was not performed.
pub const NOT_PERFORMED: &str = "Not performed.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSelection {
    /// Targets are read from the participation reply; no extra call.
    #[default]
    Inline,
    /// A dedicated `<role>/targets/<r>.<t>` call asks for the targets.
    Prompted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub temperature: f64,
    pub max_tokens: u32,
    pub repair_budget: u32,
    pub evidence_tree: bool,
    pub target_selection: TargetSelection,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            temperature: 0.0,
            max_tokens: 2048,
            repair_budget: 2,
            evidence_tree: true,
            target_selection: TargetSelection::Inline,
        }
    }
}

pub struct AgentContext<'a> {
    pub backend: &'a dyn ChatBackend,
    pub templates: &'a TemplateSet,
    pub settings: &'a AgentSettings,
    pub trace: &'a mut Trace,
}

/// What an agent currently holds: a tree, or free text when trees are ablated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentView {
    Tree(EvidenceTree),
    Text(String),
}

impl AgentView {
    pub fn render(&self) -> String {
        match self {
            AgentView::Tree(tree) => render_unchecked(tree),
            AgentView::Text(text) => text.clone(),
        }
    }

    pub fn tree(&self) -> Option<&EvidenceTree> {
        match self {
            AgentView::Tree(tree) => Some(tree),
            AgentView::Text(_) => None,
        }
    }

    /// Trees conflict when their diagnosis sets differ; free texts when their words differ.
    pub fn conflicts_with(&self, other: &AgentView) -> bool {
        match (self, other) {
            (AgentView::Tree(a), AgentView::Tree(b)) => diff_trees(a, b).has_conflict(),
            (AgentView::Text(a), AgentView::Text(b)) => {
                a.split_whitespace().ne(b.split_whitespace())
            }
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionRecord {
    pub round: u32,
    pub turn: u32,
    pub source: AgentRole,
    pub target: AgentRole,
    pub text: String,
}

/// The discussion snapshot shown in participation, targeting and opinion prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Situation {
    pub patient_case: String,
    pub round: u32,
    pub turn: u32,
    pub doctor_opinions: String,
}

impl Situation {
    pub fn new(case: &CaseRecord, round: u32, turn: u32, views: &BTreeMap<AgentRole, AgentView>) -> Self {
        Situation {
            patient_case: patient_case_json(case),
            round,
            turn,
            doctor_opinions: render_doctor_opinions(views),
        }
    }

    fn slots(&self) -> [(&'static str, String); 4] {
        [
            ("patient_case", self.patient_case.clone()),
            ("round_num", self.round.to_string()),
            ("turn_num", self.turn.to_string()),
            ("doctor_opinions", self.doctor_opinions.clone()),
        ]
    }

    fn tag(&self, role: AgentRole, what: &str) -> String {
        format!("{}/{what}/{}.{}", role.slug(), self.round, self.turn)
    }
}

pub fn patient_case_json(case: &CaseRecord) -> String {
    serde_json::to_string_pretty(&case.patient_view()).expect("patient view serializes")
}

/// `<Role> Doctor:` followed by that doctor's current view, in fixed role order.
pub fn render_doctor_opinions(views: &BTreeMap<AgentRole, AgentView>) -> String {
    views
        .iter()
        .map(|(role, view)| format!("{} Doctor:\n{}", role.title(), view.render().trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Error)]
pub enum AgentErrorKind {
    #[error("output still malformed after {repairs} repairs: {last_error}")]
    ParseFailureAfterRepairs { repairs: u32, last_error: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Error)]
#[error("{role} agent: {kind}")]
pub struct AgentError {
    pub role: AgentRole,
    pub kind: AgentErrorKind,
}

impl AgentError {
    fn new(role: AgentRole, kind: impl Into<AgentErrorKind>) -> Self {
        AgentError { role, kind: kind.into() }
    }
}

#[derive(Debug, Error)]
pub enum FinalDecisionError {
    #[error("final decision unparseable after repairs: {0}")]
    Unparseable(String),
    #[error("final decision selected no valid option letter after repairs")]
    NoValidLetters,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

enum ConverseError<E> {
    Backend(BackendError),
    Exhausted { error: E },
}

fn display_section(text: &str) -> &str {
    if text.trim().is_empty() {
        NOT_PERFORMED
    } else {
        text
    }
}

impl AgentContext<'_> {
    fn send(&mut self, phase: Phase, tag: &str, messages: &[Message], attempt: u32) -> Result<String, BackendError> {
        let request = ChatRequest {
            messages: messages.to_vec(),
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
            tag: tag.to_string(),
        };
        match self.backend.complete(&request) {
            Ok(response) => {
                self.trace.push(phase, tag, EventKind::Call, Some(format!("attempt {attempt}")), Some(&response.content));
                Ok(response.content)
            }
            Err(err) => {
                self.trace.push(phase, tag, EventKind::Call, Some(format!("attempt {attempt} failed: {err}")), None);
                Err(err)
            }
        }
    }

    fn anomaly(&mut self, phase: Phase, tag: &str, detail: String) {
        tracing::warn!(%tag, %detail, "agent anomaly");
        self.trace.push(phase, tag, EventKind::Anomaly, Some(detail), None);
    }

    /// Sends `user` under `system` and re-prompts with the parse error until
    /// `parse` accepts the reply or the repair budget is spent.
    fn converse<T, E: fmt::Display>(
        &mut self,
        phase: Phase,
        tag: &str,
        system: &str,
        user: String,
        parse: impl Fn(&str) -> Result<T, E>,
    ) -> Result<T, ConverseError<E>> {
        let mut messages = vec![Message::system(system), Message::user(user)];
        let budget = self.settings.repair_budget;
        let mut attempt = 1;
        loop {
            let raw = self.send(phase, tag, &messages, attempt).map_err(ConverseError::Backend)?;
            let error = match parse(&raw) {
                Ok(value) => return Ok(value),
                Err(error) => error,
            };
            if attempt > budget {
                return Err(ConverseError::Exhausted { error });
            }
            let detail = error.to_string();
            self.trace.push(phase, tag, EventKind::Repair, Some(detail.clone()), Some(&raw));
            let repair = self
                .templates
                .render("repair_format", &[("error", &detail)])
                .unwrap_or_else(|_| format!("Your previous output did not match the required format ({detail})."));
            messages.push(Message::assistant(raw));
            messages.push(Message::user(repair));
            attempt += 1;
        }
    }
}

/// A reply parsed as a tree that also satisfies every structural rule.
pub fn parse_valid_tree(text: &str) -> Result<EvidenceTree, String> {
    let tree = parse_tree(text).map_err(|e| e.to_string())?;
    match validate_tree(&tree).first() {
        Some(violation) => Err(violation.to_string()),
        None => Ok(tree),
    }
}

fn parse_free_text(text: &str) -> Result<String, &'static str> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        Err("empty reply")
    } else {
        Ok(trimmed.to_string())
    }
}

pub fn render_initial_prompt(
    templates: &TemplateSet,
    input: &RoleInput,
    retrieved: &[RetrievedDoc],
    evidence_tree: bool,
) -> Result<String, TemplateError> {
    let role = input.role;
    let name = match (role.is_specialist(), evidence_tree) {
        (false, _) => return Err(TemplateError::UnknownTemplate(format!("{}_initial", role.slug()))),
        (true, true) => format!("{}_initial", role.slug()),
        (true, false) => format!("{}_initial_freetext", role.slug()),
    };
    let retrieved_info = format_retrieved(retrieved);
    let mut values: Vec<(&str, &str)> = vec![("retrieved_info", &retrieved_info)];
    let mut additional = String::new();
    for (section, text) in &input.sections {
        if role == AgentRole::Outpatient && !Section::owned_by(AgentRole::Outpatient).contains(section) {
            additional.push_str(&format!(",\n\"{}\": {}", section.heading(), display_section(text)));
        } else {
            values.push((section.field_name(), display_section(text)));
        }
    }
    if role == AgentRole::Outpatient {
        values.push(("additional_sections", &additional));
    }
    templates.render(&name, &values)
}

pub fn initial_diagnosis(
    ctx: &mut AgentContext<'_>,
    input: &RoleInput,
    retrieved: &[RetrievedDoc],
) -> Result<AgentView, AgentError> {
    let role = input.role;
    let tag = format!("{}/initial", role.slug());
    let err = |kind: AgentErrorKind| AgentError::new(role, kind);
    let system = ctx.templates.persona(role).map_err(|e| err(e.into()))?.to_string();
    let user = render_initial_prompt(ctx.templates, input, retrieved, ctx.settings.evidence_tree)
        .map_err(|e| err(e.into()))?;
    let budget = ctx.settings.repair_budget;
    let outcome = if ctx.settings.evidence_tree {
        ctx.converse(Phase::Initial, &tag, &system, user, parse_valid_tree).map(AgentView::Tree)
    } else {
        ctx.converse(Phase::Initial, &tag, &system, user, |t| parse_free_text(t).map_err(str::to_string))
            .map(AgentView::Text)
    };
    outcome.map_err(|e| match e {
        ConverseError::Backend(b) => err(b.into()),
        ConverseError::Exhausted { error } => {
            err(AgentErrorKind::ParseFailureAfterRepairs { repairs: budget, last_error: error })
        }
    })
}

/// `Some(true)` for a reply whose first word is "yes", `Some(false)` for "no".
pub fn classify_yes_no(reply: &str) -> Option<bool> {
    let first: String = reply
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    match first.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Participation {
    pub participate: bool,
    /// The reply that was classified; empty when the backend failed.
    pub reply: String,
}

/// Never fails: unusable replies get one repair, then default to "no".
pub fn should_participate(ctx: &mut AgentContext<'_>, role: AgentRole, situation: &Situation) -> Participation {
    let tag = situation.tag(role, "participate");
    let no = |reply: String| Participation { participate: false, reply };
    let slots = situation.slots();
    let slot_refs: Vec<(&str, &str)> = slots.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let (system, user) = match (ctx.templates.persona(role), ctx.templates.render("participate", &slot_refs)) {
        (Ok(system), Ok(user)) => (system.to_string(), user),
        (Err(e), _) | (_, Err(e)) => {
            ctx.anomaly(Phase::Discussion, &tag, format!("template failure, defaulting to no: {e}"));
            return no(String::new());
        }
    };
    let mut messages = vec![Message::system(system), Message::user(user)];
    let first = match ctx.send(Phase::Discussion, &tag, &messages, 1) {
        Ok(reply) => reply,
        Err(e) => {
            ctx.anomaly(Phase::Discussion, &tag, format!("backend failure, defaulting to no: {e}"));
            return no(String::new());
        }
    };
    if let Some(participate) = classify_yes_no(&first) {
        return Participation { participate, reply: first };
    }
    ctx.anomaly(Phase::Discussion, &tag, format!("participation reply not yes/no: {:?}", first.trim()));
    let repair = ctx
        .templates
        .render("repair_yes_no", &[])
        .unwrap_or_else(|_| "Please answer only with \"Yes\" or \"No\".".to_string());
    ctx.trace.push(Phase::Discussion, &tag, EventKind::Repair, Some("expected yes or no".into()), Some(&first));
    messages.push(Message::assistant(first));
    messages.push(Message::user(repair));
    match ctx.send(Phase::Discussion, &tag, &messages, 2) {
        Ok(second) => match classify_yes_no(&second) {
            Some(participate) => Participation { participate, reply: second },
            None => {
                ctx.anomaly(Phase::Discussion, &tag, format!("participation reply not yes/no after repair: {:?}", second.trim()));
                no(second)
            }
        },
        Err(e) => {
            ctx.anomaly(Phase::Discussion, &tag, format!("backend failure, defaulting to no: {e}"));
            no(String::new())
        }
    }
}

/// Specialist roles named in free text, by whole-word alias match.
pub fn parse_role_names(text: &str) -> Vec<AgentRole> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    AgentRole::SPECIALISTS
        .into_iter()
        .filter(|role| role.aliases().iter().any(|alias| words.iter().any(|w| w == alias)))
        .collect()
}

/// Text after the leading yes/no word of a participation reply.
fn after_first_word(reply: &str) -> &str {
    let start = reply.trim_start_matches(|c: char| !c.is_alphanumeric());
    let end = start.find(|c: char| !c.is_alphabetic()).unwrap_or(start.len());
    &start[end..]
}

/// Peers the role addresses this turn, in fixed role order.
pub fn choose_targets(
    ctx: &mut AgentContext<'_>,
    role: AgentRole,
    situation: &Situation,
    participation: &Participation,
    views: &BTreeMap<AgentRole, AgentView>,
) -> Vec<AgentRole> {
    let peers: Vec<AgentRole> = views.keys().copied().filter(|r| *r != role).collect();
    let tag = situation.tag(role, "targets");
    let named_text = match ctx.settings.target_selection {
        TargetSelection::Inline => after_first_word(&participation.reply).to_string(),
        TargetSelection::Prompted => {
            let peer_list = peers.iter().map(|p| p.title()).collect::<Vec<_>>().join(", ");
            let mut slots: Vec<(&str, String)> = situation.slots().into_iter().collect();
            slots.push(("source_doctor", role.title().to_string()));
            slots.push(("peers", peer_list));
            let slot_refs: Vec<(&str, &str)> = slots.iter().map(|(k, v)| (*k, v.as_str())).collect();
            let prompt = ctx.templates.persona(role).map(str::to_string).and_then(|system| {
                ctx.templates.render("targets", &slot_refs).map(|user| (system, user))
            });
            match prompt {
                Ok((system, user)) => {
                    match ctx.send(Phase::Discussion, &tag, &[Message::system(system), Message::user(user)], 1) {
                        Ok(reply) => reply,
                        Err(e) => {
                            ctx.anomaly(Phase::Discussion, &tag, format!("backend failure: {e}"));
                            String::new()
                        }
                    }
                }
                Err(e) => {
                    ctx.anomaly(Phase::Discussion, &tag, format!("template failure: {e}"));
                    String::new()
                }
            }
        }
    };
    let named = parse_role_names(&named_text);
    if named.contains(&role) {
        ctx.anomaly(Phase::Discussion, &tag, "self-targeting removed".into());
    }
    let targets: Vec<AgentRole> = named.iter().copied().filter(|r| peers.contains(r)).collect();
    if targets.len() + usize::from(named.contains(&role)) < named.len() {
        ctx.anomaly(Phase::Discussion, &tag, "inactive role named as target".into());
    }
    if !targets.is_empty() {
        return targets;
    }
    let own = &views[&role];
    let fallback: Vec<AgentRole> = peers.into_iter().filter(|p| own.conflicts_with(&views[p])).collect();
    if ctx.settings.target_selection == TargetSelection::Prompted || !named.is_empty() {
        ctx.anomaly(Phase::Discussion, &tag, format!("no usable targets named; conflict fallback chose {}", fallback.len()));
    }
    fallback
}

pub fn generate_opinion(
    ctx: &mut AgentContext<'_>,
    source: AgentRole,
    target: AgentRole,
    situation: &Situation,
) -> Result<OpinionRecord, AgentError> {
    debug_assert_ne!(source, target);
    let tag = situation.tag(source, &format!("opinion-{}", target.slug()));
    let err = |kind: AgentErrorKind| AgentError::new(source, kind);
    let mut slots: Vec<(&str, String)> = situation.slots().into_iter().collect();
    slots.push(("source_doctor", source.title().to_string()));
    slots.push(("target_doctor", target.title().to_string()));
    let slot_refs: Vec<(&str, &str)> = slots.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let system = ctx.templates.persona(source).map_err(|e| err(e.into()))?.to_string();
    let user = ctx.templates.render("opinion", &slot_refs).map_err(|e| err(e.into()))?;
    let text = ctx
        .send(Phase::Discussion, &tag, &[Message::system(system), Message::user(user)], 1)
        .map_err(|e| err(e.into()))?;
    ctx.trace.push(Phase::Discussion, &tag, EventKind::Opinion, None, Some(&text));
    Ok(OpinionRecord { round: situation.round, turn: situation.turn, source, target, text })
}

/// Feedback grouped by source role, each block headed by its author.
pub fn render_feedback(feedback: &[&OpinionRecord]) -> String {
    let mut blocks = Vec::new();
    for source in AgentRole::SPECIALISTS {
        let from: Vec<&&OpinionRecord> = feedback.iter().filter(|o| o.source == source).collect();
        if from.is_empty() {
            continue;
        }
        let mut block = format!("From the {} doctor:", source.title());
        for o in from {
            block.push_str(&format!("\n(Round {}, Turn {}) {}", o.round, o.turn, o.text.trim()));
        }
        blocks.push(block);
    }
    blocks.join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub view: AgentView,
    /// Whether the model produced the new view (false for identity or fallback).
    pub replaced: bool,
}

/// Empty feedback is the identity and makes no call. Replies that stay
/// malformed after repairs leave the original in place.
pub fn update_tree(
    ctx: &mut AgentContext<'_>,
    role: AgentRole,
    original: &AgentView,
    feedback: &[&OpinionRecord],
    round: u32,
) -> Result<UpdateOutcome, AgentError> {
    if feedback.is_empty() {
        return Ok(UpdateOutcome { view: original.clone(), replaced: false });
    }
    debug_assert!(feedback.iter().all(|o| o.target == role && o.round == round));
    let tag = format!("{}/update/{round}", role.slug());
    let err = |kind: AgentErrorKind| AgentError::new(role, kind);
    let original_text = original.render();
    let feedback_text = render_feedback(feedback);
    let name = if ctx.settings.evidence_tree { "update" } else { "update_freetext" };
    let system = ctx.templates.persona(role).map_err(|e| err(e.into()))?.to_string();
    let user = ctx
        .templates
        .render(
            name,
            &[
                ("doctor_type", role.title()),
                ("original_diagnosis", original_text.trim_end()),
                ("feedback", &feedback_text),
            ],
        )
        .map_err(|e| err(e.into()))?;
    let outcome = if ctx.settings.evidence_tree {
        ctx.converse(Phase::Update, &tag, &system, user, parse_valid_tree).map(AgentView::Tree)
    } else {
        ctx.converse(Phase::Update, &tag, &system, user, |t| parse_free_text(t).map_err(str::to_string))
            .map(AgentView::Text)
    };
    match outcome {
        Ok(view) => Ok(UpdateOutcome { view, replaced: true }),
        Err(ConverseError::Backend(b)) => Err(err(b.into())),
        Err(ConverseError::Exhausted { error }) => {
            ctx.anomaly(Phase::Update, &tag, format!("update unparseable after repairs, keeping original: {error}"));
            Ok(UpdateOutcome { view: original.clone(), replaced: false })
        }
    }
}

pub fn final_decision(
    ctx: &mut AgentContext<'_>,
    case: &CaseRecord,
    views: &BTreeMap<AgentRole, AgentView>,
    options: &DiagnosisOptions,
) -> Result<FinalDecision, FinalDecisionError> {
    let tag = "moderator/final";
    let system = ctx.templates.persona(AgentRole::Moderator)?.to_string();
    let patient_case = patient_case_json(case);
    let opinions = render_doctor_opinions(views);
    let rendered_options = options.render();
    let user = ctx.templates.render(
        "final",
        &[("patient_case", &patient_case), ("doctor_opinions", &opinions), ("options", &rendered_options)],
    )?;
    match ctx.converse(Phase::Final, tag, &system, user, |raw| parse_decision(raw, options)) {
        Ok(decision) => {
            if !decision.dropped_letters.is_empty() {
                let detail = format!("dropped letters outside the options: {}", decision.dropped_letters.join(","));
                ctx.anomaly(Phase::Final, tag, detail);
            }
            Ok(decision)
        }
        Err(ConverseError::Backend(b)) => Err(b.into()),
        Err(ConverseError::Exhausted { error: DecisionParseError::NoValidLetters }) => {
            Err(FinalDecisionError::NoValidLetters)
        }
        Err(ConverseError::Exhausted { error: DecisionParseError::Unparseable(reason) }) => {
            Err(FinalDecisionError::Unparseable(reason))
        }
    }
}

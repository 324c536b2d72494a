//! One diagnosis run per case: initial trees, bounded cross-verification,
//! per-round updates, option construction and the moderator's decision.
//!
//! Specialists act in the fixed order Outpatient, Laboratory, Radiology,
//! Pathology. Rounds are numbered 1..=k and turns 1..=t. Feedback passed to
//! an update is the current round's opinions addressed to that role.

mod output;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

pub use output::{result_json, write_outputs, OutputError, OutputOptions};

use crate::agents::{
    choose_targets, final_decision, generate_opinion, initial_diagnosis, should_participate, update_tree,
    AgentContext, AgentError, AgentSettings, AgentView, FinalDecision, FinalDecisionError, OpinionRecord, Situation,
    TargetSelection, TemplateSet,
};
use crate::backend::{BackendProvider, ChatBackend};
use crate::case_model::{
    build_options, default_distractor_count, slice_for_role, CaseRecord, DiagnosisOptions, LabelPool, OptionsError,
    SliceError,
};
use crate::evaluation::{aggregate, score_case, CaseScore, EvalError, EvalReport};
use crate::evidence_tree::{merge_trees, EvidenceTree};
use crate::retrieval::{RetrievalSet, QUERY_TOKEN_BUDGET, SNIPPET_TOKEN_BUDGET};
use crate::role::AgentRole;
use crate::text::stable_hash;
use crate::trace::{EventKind, Phase, Trace};

pub const CONSENSUS_TITLE: &str = "Consensus Reasoning Pathway";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Discussion rounds.
    pub k: u32,
    /// Turns per round.
    pub t: u32,
    pub active_roles: BTreeSet<AgentRole>,
    /// Distractors per case; `None` means `max(3, |gold|)`.
    pub distractor_count: Option<usize>,
    pub seed: u64,
    pub retrieval_k: usize,
    pub evidence_tree: bool,
    pub cross_verification: bool,
    pub rag: bool,
    pub repair_budget: u32,
    /// Skip remaining rounds after a round with no opinions.
    pub early_exit: bool,
    pub target_selection: TargetSelection,
    pub temperature: f64,
    pub max_tokens: u32,
    pub query_token_budget: usize,
    pub snippet_token_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentSettings::default();
        RunConfig {
            k: 2,
            t: 2,
            active_roles: AgentRole::SPECIALISTS.into_iter().collect(),
            distractor_count: None,
            seed: 0,
            retrieval_k: 3,
            evidence_tree: true,
            cross_verification: true,
            rag: true,
            repair_budget: agent.repair_budget,
            early_exit: false,
            target_selection: agent.target_selection,
            temperature: agent.temperature,
            max_tokens: agent.max_tokens,
            query_token_budget: QUERY_TOKEN_BUDGET,
            snippet_token_budget: SNIPPET_TOKEN_BUDGET,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 || self.t == 0 {
            return Err("k and t must be at least 1".into());
        }
        if !self.active_roles.contains(&AgentRole::Outpatient) {
            return Err("the outpatient role must stay active".into());
        }
        if self.active_roles.contains(&AgentRole::Moderator) {
            return Err("the moderator is not a specialist role".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err("temperature must be finite and non-negative".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn agent_settings(&self) -> AgentSettings {
        AgentSettings {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            repair_budget: self.repair_budget,
            evidence_tree: self.evidence_tree,
            target_selection: self.target_selection,
        }
    }

    /// Active specialists in iteration order.
    pub fn roles(&self) -> Vec<AgentRole> {
        AgentRole::SPECIALISTS.into_iter().filter(|r| self.active_roles.contains(r)).collect()
    }
}

/// Per-case seed: the run seed XOR a stable hash of the case id.
pub fn derive_case_seed(seed: u64, case_id: &str) -> u64 {
    seed ^ stable_hash(case_id)
}

/// Everything a run reads besides the case, pool and config.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub templates: TemplateSet,
    pub retrieval: RetrievalSet,
}

/// Per-role views plus the interaction log, as the discussion loop mutates them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunState {
    pub views: BTreeMap<AgentRole, AgentView>,
    pub log: Vec<OpinionRecord>,
    pub round_num: u32,
    pub turn_num: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    pub initial: Duration,
    pub discussion: Duration,
    pub decision: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case_id: String,
    pub final_decision: FinalDecision,
    pub options: DiagnosisOptions,
    pub score: CaseScore,
    pub initial_views: BTreeMap<AgentRole, AgentView>,
    /// Views after each round's updates.
    pub round_views: Vec<BTreeMap<AgentRole, AgentView>>,
    pub final_views: BTreeMap<AgentRole, AgentView>,
    pub interactions: Vec<OpinionRecord>,
    /// Deterministic union of the final trees (absent in free-text runs).
    pub consensus: Option<EvidenceTree>,
    pub trace: Trace,
    /// Wall-clock only; excluded from serialization so outputs stay reproducible.
    #[serde(skip)]
    pub timing: Timing,
}

#[derive(Debug, Error)]
pub enum RunErrorKind {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Options(#[from] OptionsError),
    #[error(transparent)]
    Final(#[from] FinalDecisionError),
}

#[derive(Debug, Error)]
#[error("case {case_id}: {kind}")]
pub struct RunError {
    pub case_id: String,
    pub kind: RunErrorKind,
    /// Events recorded before the failure.
    pub trace: Trace,
}

fn snapshot(trace: &mut Trace, phase: Phase, tag: String, detail: &str, view: &AgentView) {
    trace.push(phase, tag, EventKind::TreeSnapshot, Some(detail.to_string()), Some(&view.render()));
}

pub fn run_case(
    case: &CaseRecord,
    pool: &LabelPool,
    config: &RunConfig,
    resources: &Resources,
    backend: &dyn ChatBackend,
) -> Result<CaseResult, RunError> {
    let mut trace = Trace::new();
    match run_inner(case, pool, config, resources, backend, &mut trace) {
        Ok(mut result) => {
            result.trace = trace;
            Ok(result)
        }
        Err(kind) => Err(RunError { case_id: case.case_id.clone(), kind, trace }),
    }
}

fn run_inner(
    case: &CaseRecord,
    pool: &LabelPool,
    config: &RunConfig,
    resources: &Resources,
    backend: &dyn ChatBackend,
    trace: &mut Trace,
) -> Result<CaseResult, RunErrorKind> {
    config.validate().map_err(RunErrorKind::Config)?;
    let settings = config.agent_settings();
    let roles = config.roles();
    let mut ctx = AgentContext { backend, templates: &resources.templates, settings: &settings, trace };
    let mut state = RunState::default();

    let started = Instant::now();
    for &role in &roles {
        let input = slice_for_role(case, role, &config.active_roles)?;
        let retrieved = if config.rag {
            let docs = resources.retrieval.retrieve(
                &input,
                config.retrieval_k,
                config.query_token_budget,
                config.snippet_token_budget,
            );
            let ids = docs.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>().join(",");
            ctx.trace.push(Phase::Retrieval, format!("{}/retrieval", role.slug()), EventKind::Retrieved, Some(ids), None);
            docs
        } else {
            Vec::new()
        };
        let view = initial_diagnosis(&mut ctx, &input, &retrieved)?;
        snapshot(ctx.trace, Phase::Initial, format!("{}/initial", role.slug()), "initial", &view);
        state.views.insert(role, view);
    }
    let initial_views = state.views.clone();
    let initial = started.elapsed();

    let started = Instant::now();
    let mut round_views = Vec::new();
    if config.cross_verification {
        while state.round_num < config.k {
            state.round_num += 1;
            let round = state.round_num;
            let first_of_round = state.log.len();
            for turn in 1..=config.t {
                state.turn_num = turn;
                // Views only change between rounds, so one snapshot serves the whole turn.
                let situation = Situation::new(case, round, turn, &state.views);
                for &role in &roles {
                    let participation = should_participate(&mut ctx, role, &situation);
                    if !participation.participate {
                        continue;
                    }
                    let targets = choose_targets(&mut ctx, role, &situation, &participation, &state.views);
                    for target in targets {
                        let opinion = generate_opinion(&mut ctx, role, target, &situation)?;
                        state.log.push(opinion);
                    }
                }
            }
            let this_round = &state.log[first_of_round..];
            for &role in &roles {
                let feedback: Vec<&OpinionRecord> = this_round.iter().filter(|o| o.target == role).collect();
                let outcome = update_tree(&mut ctx, role, &state.views[&role], &feedback, round)?;
                if outcome.replaced {
                    let tag = format!("{}/update/{round}", role.slug());
                    snapshot(ctx.trace, Phase::Update, tag, "updated", &outcome.view);
                    state.views.insert(role, outcome.view);
                }
            }
            round_views.push(state.views.clone());
            if config.early_exit && this_round.is_empty() && state.round_num < config.k {
                info!(case = %case.case_id, round, "no opinions this round; skipping the remaining rounds");
                ctx.trace.push(Phase::Discussion, format!("round/{round}"), EventKind::Anomaly, Some("early exit".into()), None);
                break;
            }
        }
    }
    let discussion = started.elapsed();

    let started = Instant::now();
    let count = config.distractor_count.unwrap_or_else(|| default_distractor_count(case));
    let options = build_options(case, pool, count, derive_case_seed(config.seed, &case.case_id))?;
    ctx.trace.push(Phase::Options, "options", EventKind::OptionsBuilt, None, Some(&options.render()));
    let decision = final_decision(&mut ctx, case, &state.views, &options)?;
    ctx.trace.push(
        Phase::Final,
        "moderator/final",
        EventKind::TreeSnapshot,
        Some("merged".into()),
        Some(&crate::evidence_tree::render_unchecked(&decision.merged_tree)),
    );
    let decision_time = started.elapsed();

    let consensus = if config.evidence_tree {
        let trees: Vec<EvidenceTree> = state.views.values().filter_map(|v| v.tree().cloned()).collect();
        merge_trees(&trees, CONSENSUS_TITLE).ok()
    } else {
        None
    };
    let score = score_case(&decision, &options);
    Ok(CaseResult {
        case_id: case.case_id.clone(),
        final_decision: decision,
        options,
        score,
        initial_views,
        round_views,
        final_views: state.views,
        interactions: state.log,
        consensus,
        trace: Trace::new(),
        timing: Timing { initial, discussion, decision: decision_time },
    })
}

#[derive(Debug)]
pub struct BatchOutcome {
    /// Successful cases, in input order.
    pub results: Vec<CaseResult>,
    pub failures: Vec<RunError>,
    /// `None` when every case failed.
    pub report: Option<EvalReport>,
}

impl BatchOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every case, `jobs` at a time. A failing case never stops the others.
pub fn run_batch(
    cases: &[CaseRecord],
    pool: &LabelPool,
    config: &RunConfig,
    resources: &Resources,
    provider: &dyn BackendProvider,
    jobs: usize,
) -> BatchOutcome {
    let run_one = |case: &CaseRecord| {
        let backend = provider.for_case(&case.case_id);
        let outcome = run_case(case, pool, config, resources, backend.as_ref());
        if let Err(e) = &outcome {
            warn!(error = %e, "case failed");
        }
        outcome
    };
    let outcomes: Vec<Result<CaseResult, RunError>> = if jobs <= 1 {
        cases.iter().map(run_one).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(workers) => workers.install(|| cases.par_iter().map(run_one).collect()),
            Err(e) => {
                warn!(%e, "could not start worker pool; running sequentially");
                cases.iter().map(run_one).collect()
            }
        }
    };
    let (mut results, mut failures) = (Vec::new(), Vec::new());
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(e),
        }
    }
    let scores: Vec<(String, CaseScore)> = results.iter().map(|r| (r.case_id.clone(), r.score)).collect();
    let report = match aggregate(&scores) {
        Ok(report) => Some(report),
        Err(EvalError::EmptyBatch) => None,
        Err(e) => unreachable!("aggregate only fails on empty input: {e}"),
    };
    BatchOutcome { results, failures, report }
}

#[cfg(test)]
mod tests;

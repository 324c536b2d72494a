use super::*;
use crate::backend::{MatchMode, ScriptedBackend, ScriptedProvider};
use crate::case_model::generate_cases;
use crate::case_model::synth::builtin_label_pool;
use crate::scenario::{build_scenario, ScenarioKind};

fn run(kind: ScenarioKind, config: &RunConfig) -> (CaseResult, usize) {
    let cases = generate_cases(1, 11);
    let pool = builtin_label_pool();
    let s = build_scenario(kind, &cases, &pool, config).unwrap();
    let backend = ScriptedBackend::for_case(&s.transcript, &cases[0].case_id, MatchMode::Strict);
    let result = run_case(&cases[0], &pool, &s.config, &Resources::default(), &backend).unwrap();
    (result, backend.remaining())
}

#[test]
fn all_participate_makes_45_calls() {
    let (r, left) = run(ScenarioKind::AllParticipate, &RunConfig::default());
    assert_eq!(r.trace.call_count(), 45);
    assert_eq!(left, 0);
    assert_eq!(r.interactions.len(), 16);
    assert_ne!(r.final_views, r.initial_views);
}

#[test]
fn none_participate_makes_21_calls_and_keeps_trees() {
    let (r, left) = run(ScenarioKind::NoneParticipate, &RunConfig::default());
    assert_eq!(r.trace.call_count(), 21);
    assert_eq!(left, 0);
    assert_eq!(r.final_views, r.initial_views);
}

#[test]
fn early_exit_skips_idle_rounds() {
    let config = RunConfig { early_exit: true, ..RunConfig::default() };
    let (r, left) = run(ScenarioKind::NoneParticipate, &config);
    assert_eq!(r.trace.call_count(), 4 + 8 + 1);
    assert_eq!(left, 0);
}

#[test]
fn cross_verification_off_is_initial_plus_final() {
    let (r, _) = run(ScenarioKind::CrossVerifyOff, &RunConfig::default());
    assert_eq!(r.trace.call_count(), 5);
    assert!(r.round_views.is_empty());
    assert_eq!(r.final_views, r.initial_views);
}

#[test]
fn repairs_and_retained_update() {
    let (r, left) = run(ScenarioKind::RepairNeeded, &RunConfig::default());
    assert_eq!(left, 0);
    // 45 + one repair each for outpatient/initial, laboratory/participate/1.1,
    // moderator/final, plus two for the never-valid radiology update.
    assert_eq!(r.trace.call_count(), 45 + 3 + 2);
    assert_eq!(r.round_views[0][&AgentRole::Radiology], r.initial_views[&AgentRole::Radiology]);
    assert!(r.trace.anomalies().iter().any(|e| e.tag == "radiology/update/1"));
}

#[test]
fn prompted_targets_add_one_call_per_participation() {
    let config = RunConfig { target_selection: TargetSelection::Prompted, ..RunConfig::default() };
    let (r, left) = run(ScenarioKind::AllParticipate, &config);
    assert_eq!(left, 0);
    assert_eq!(r.trace.call_count(), 45 + 16);
}

#[test]
fn free_text_mode_runs() {
    let config = RunConfig { evidence_tree: false, ..RunConfig::default() };
    let (r, left) = run(ScenarioKind::AllParticipate, &config);
    assert_eq!(left, 0);
    assert!(r.consensus.is_none());
    assert!(matches!(r.initial_views[&AgentRole::Outpatient], AgentView::Text(_)));
}

#[test]
fn invalid_config_is_reported_with_case_id() {
    let cases = generate_cases(1, 1);
    let config = RunConfig { k: 0, ..RunConfig::default() };
    let backend = ScriptedBackend::new(Default::default(), MatchMode::Strict);
    let err = run_case(&cases[0], &builtin_label_pool(), &config, &Resources::default(), &backend).unwrap_err();
    assert!(matches!(err.kind, RunErrorKind::Config(_)));
    assert_eq!(err.case_id, cases[0].case_id);
}

#[test]
fn batch_isolates_failures() {
    let cases = generate_cases(3, 5);
    let pool = builtin_label_pool();
    let s = build_scenario(ScenarioKind::NoneParticipate, &cases, &pool, &RunConfig::default()).unwrap();
    let mut transcript = s.transcript.clone();
    let doomed = cases[1].case_id.clone();
    transcript.entries.retain(|e| !(e.case_id.as_deref() == Some(&doomed) && e.tag == "moderator/final"));
    let provider = ScriptedProvider::new(transcript, MatchMode::Strict);
    let out = run_batch(&cases, &pool, &s.config, &Resources::default(), &provider, 2);
    assert_eq!(out.results.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].case_id, doomed);
    assert!(out.failures[0].trace.call_count() > 0);
    assert_eq!(out.report.unwrap().per_case.len(), 2);
}

#[test]
fn per_case_seed_is_xor_of_hash() {
    assert_eq!(derive_case_seed(0, "x"), stable_hash("x"));
    assert_eq!(derive_case_seed(7, "x") ^ 7, stable_hash("x"));
}

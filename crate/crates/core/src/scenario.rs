//! Scripted workflows for offline runs and tests.
//!
//! A scenario fixes, for every case, what each specialist answers when asked
//! to participate and whom it addresses, which calls need repairs, and what
//! the moderator selects. From that it writes a case-scoped transcript in
//! exactly the order the engine issues requests, so it replays in strict mode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::TargetSelection;
use crate::backend::{Transcript, TranscriptEntry};
use crate::case_model::{build_options, default_distractor_count, slice_for_role, CaseRecord, LabelPool, OptionsError, Section};
use crate::evidence_tree::{merge_trees, render_unchecked, DiagnosisEntry, EvidenceTree};
use crate::orchestrator::{derive_case_seed, RunConfig};
use crate::role::AgentRole;
use crate::text::normalize_label;

const MALFORMED: &str = "I am not sure how to structure this.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Every specialist joins every turn and addresses the next role in the cycle.
    AllParticipate,
    /// Nobody joins; updates are skipped and trees stay as first emitted.
    NoneParticipate,
    /// Participation alternates; some turns address two peers; the moderator
    /// trades one gold label for a distractor.
    Mixed,
    /// All-participate plus a repaired initial tree, a repaired yes/no, an
    /// update that never parses, and a repaired final decision.
    RepairNeeded,
    /// Discussion disabled: initial trees and the final decision only.
    CrossVerifyOff,
    /// Nobody joins; the moderator always picks exactly the gold letters.
    PerfectOracle,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::AllParticipate,
        ScenarioKind::NoneParticipate,
        ScenarioKind::Mixed,
        ScenarioKind::RepairNeeded,
        ScenarioKind::CrossVerifyOff,
        ScenarioKind::PerfectOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::AllParticipate => "all-participate",
            ScenarioKind::NoneParticipate => "none-participate",
            ScenarioKind::Mixed => "mixed",
            ScenarioKind::RepairNeeded => "repair-needed",
            ScenarioKind::CrossVerifyOff => "cross-verify-off",
            ScenarioKind::PerfectOracle => "perfect-oracle",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub participate: bool,
    pub targets: Vec<AgentRole>,
}

/// Pure description of one case's scripted behavior.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    /// Keyed by (role, round, turn).
    pub answers: BTreeMap<(AgentRole, u32, u32), Answer>,
    /// Unusable replies sent before the usable one, by tag.
    pub bad_replies: BTreeMap<String, u32>,
    /// Tags whose every reply is unusable (the repair budget is exhausted).
    pub never_valid: BTreeSet<String>,
}

impl Script {
    fn bad(&self, tag: &str) -> u32 {
        self.bad_replies.get(tag).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub config: RunConfig,
    pub transcript: Transcript,
    pub scripts: BTreeMap<String, Script>,
}

fn next_peers(roles: &[AgentRole], role: AgentRole, count: usize) -> Vec<AgentRole> {
    let i = roles.iter().position(|r| *r == role).expect("role is active");
    let mut out: Vec<AgentRole> = (1..roles.len()).map(|d| roles[(i + d) % roles.len()]).take(count).collect();
    out.sort();
    out
}

fn script_for(kind: ScenarioKind, config: &RunConfig) -> Script {
    let roles = config.roles();
    let mut script = Script::default();
    if config.cross_verification && kind != ScenarioKind::CrossVerifyOff {
        for round in 1..=config.k {
            for turn in 1..=config.t {
                for (idx, &role) in roles.iter().enumerate() {
                    let answer = match kind {
                        ScenarioKind::AllParticipate | ScenarioKind::RepairNeeded => {
                            Answer { participate: true, targets: next_peers(&roles, role, 1) }
                        }
                        ScenarioKind::Mixed => {
                            let join = (idx as u32 + round + turn) % 2 == 1;
                            let width = if turn % 2 == 0 { 2 } else { 1 };
                            Answer {
                                participate: join,
                                targets: if join { next_peers(&roles, role, width) } else { Vec::new() },
                            }
                        }
                        _ => Answer { participate: false, targets: Vec::new() },
                    };
                    if answer.participate && answer.targets.is_empty() {
                        continue;
                    }
                    script.answers.insert((role, round, turn), answer);
                }
            }
        }
    }
    if kind == ScenarioKind::RepairNeeded {
        script.bad_replies.insert("outpatient/initial".into(), 1);
        script.bad_replies.insert("moderator/final".into(), 1);
        if roles.contains(&AgentRole::Laboratory) && config.cross_verification {
            script.bad_replies.insert("laboratory/participate/1.1".into(), 1);
        }
        // Radiology receives feedback in round 1 whenever someone addresses it.
        let addressed = script
            .answers
            .iter()
            .any(|((_, r, _), a)| *r == 1 && a.targets.contains(&AgentRole::Radiology));
        if addressed {
            let tag = "radiology/update/1".to_string();
            script.bad_replies.insert(tag.clone(), config.repair_budget + 1);
            script.never_valid.insert(tag);
        }
    }
    script
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn unique_labels(case: &CaseRecord) -> Vec<String> {
    let mut seen = BTreeSet::new();
    case.gold_labels
        .iter()
        .filter(|l| seen.insert(normalize_label(l)))
        .map(|l| one_line(l))
        .collect()
}

/// The tree a specialist emits for `case` in scripted runs.
pub fn role_tree(case: &CaseRecord, role: AgentRole, active: &BTreeSet<AgentRole>) -> EvidenceTree {
    let input = slice_for_role(case, role, active).expect("scenario roles are valid");
    let evidence: Vec<String> = input
        .sections
        .iter()
        .filter(|(s, text)| !matches!(s, Section::Age | Section::Sex) && !text.trim().is_empty())
        .map(|(s, text)| format!("{}: {}", s.heading(), one_line(text)))
        .collect();
    let evidence = if evidence.is_empty() { vec!["No abnormal findings reported".to_string()] } else { evidence };
    let entries = unique_labels(case)
        .into_iter()
        .map(|label| {
            let analysis = format!("The {} findings are consistent with {label}.", role.title().to_lowercase());
            DiagnosisEntry::new(label, analysis, evidence.clone())
        })
        .collect();
    EvidenceTree::new(format!("{} Doctor Reasoning Pathway", role.title()), entries)
}

fn revised(tree: &EvidenceTree, round: u32) -> EvidenceTree {
    let mut tree = tree.clone();
    for entry in &mut tree.entries {
        entry.analysis.push_str(&format!(" Reviewed after round {round} feedback."));
    }
    tree
}

fn view_text(tree: &EvidenceTree, evidence_tree: bool) -> String {
    if evidence_tree {
        render_unchecked(tree)
    } else {
        let labels: Vec<&str> = tree.entries.iter().map(|e| e.disease.as_str()).collect();
        let findings: Vec<&str> = tree
            .entries
            .first()
            .map(|e| e.evidence.iter().map(|i| i.text.as_str()).collect())
            .unwrap_or_default();
        format!("{}: most likely {}. Findings: {}.", tree.title, labels.join(", "), findings.join("; "))
    }
}

struct Writer<'a> {
    case_id: &'a str,
    entries: Vec<TranscriptEntry>,
}

impl Writer<'_> {
    fn push(&mut self, tag: &str, response: impl Into<String>) {
        self.entries.push(TranscriptEntry::new(tag, response).for_case(self.case_id));
    }

    fn with_repairs(&mut self, script: &Script, tag: &str, bad: &str, good: impl Into<String>) {
        for _ in 0..script.bad(tag) {
            self.push(tag, bad);
        }
        if !script.never_valid.contains(tag) {
            self.push(tag, good);
        }
    }
}

fn titles(roles: &[AgentRole]) -> String {
    roles.iter().map(|r| r.title()).collect::<Vec<_>>().join(", ")
}

fn case_transcript(
    kind: ScenarioKind,
    case: &CaseRecord,
    pool: &LabelPool,
    config: &RunConfig,
    script: &Script,
) -> Result<Vec<TranscriptEntry>, OptionsError> {
    let roles = config.roles();
    let mut w = Writer { case_id: &case.case_id, entries: Vec::new() };
    let mut trees: BTreeMap<AgentRole, EvidenceTree> = BTreeMap::new();
    for &role in &roles {
        let tree = role_tree(case, role, &config.active_roles);
        w.with_repairs(script, &format!("{}/initial", role.slug()), MALFORMED, view_text(&tree, config.evidence_tree));
        trees.insert(role, tree);
    }
    if config.cross_verification {
        for round in 1..=config.k {
            let mut addressed = BTreeSet::new();
            for turn in 1..=config.t {
                for &role in &roles {
                    let answer = script.answers.get(&(role, round, turn));
                    let tag = format!("{}/participate/{round}.{turn}", role.slug());
                    let participates = answer.is_some_and(|a| a.participate);
                    let reply = match (answer, config.target_selection) {
                        (Some(a), TargetSelection::Inline) if a.participate => format!("Yes. {}", titles(&a.targets)),
                        (Some(a), TargetSelection::Prompted) if a.participate => "Yes".to_string(),
                        _ => "No".to_string(),
                    };
                    w.with_repairs(script, &tag, "Perhaps.", reply);
                    if !participates {
                        continue;
                    }
                    let answer = answer.expect("participating roles have answers");
                    if config.target_selection == TargetSelection::Prompted {
                        w.push(&format!("{}/targets/{round}.{turn}", role.slug()), titles(&answer.targets));
                    }
                    for target in &answer.targets {
                        let text = format!(
                            "As the {} doctor I largely agree with the {} doctor; please weigh the findings again (round {round}, turn {turn}).",
                            role.title(),
                            target.title()
                        );
                        w.push(&format!("{}/opinion-{}/{round}.{turn}", role.slug(), target.slug()), text);
                        addressed.insert(*target);
                    }
                }
            }
            for &role in &roles {
                if !addressed.contains(&role) {
                    continue;
                }
                let tag = format!("{}/update/{round}", role.slug());
                let next = revised(&trees[&role], round);
                w.with_repairs(script, &tag, MALFORMED, view_text(&next, config.evidence_tree));
                if !script.never_valid.contains(&tag) {
                    trees.insert(role, next);
                }
            }
            if config.early_exit && addressed.is_empty() {
                break;
            }
        }
    }

    let count = config.distractor_count.unwrap_or_else(|| default_distractor_count(case));
    let options = build_options(case, pool, count, derive_case_seed(config.seed, &case.case_id))?;
    let mut selected: Vec<String> = options.gold_letters().into_iter().collect();
    if kind == ScenarioKind::Mixed && selected.len() > 1 {
        selected.pop();
        if let Some(distractor) = options.items.iter().find(|i| !i.is_gold) {
            selected.push(distractor.letter.clone());
        }
    }
    let all: Vec<EvidenceTree> = trees.into_values().collect();
    let merged = merge_trees(&all, "Reasoning Pathway").expect("scripted trees are valid");
    let reply = serde_json::json!({
        "selected_options": selected.join(","),
        "evi_tree": render_unchecked(&merged),
    });
    w.with_repairs(script, "moderator/final", MALFORMED, serde_json::to_string_pretty(&reply).expect("json"));
    Ok(w.entries)
}

/// Builds the scenario for `cases` on top of `base` (which supplies k, t,
/// roles, seed and the other run settings).
pub fn build_scenario(
    kind: ScenarioKind,
    cases: &[CaseRecord],
    pool: &LabelPool,
    base: &RunConfig,
) -> Result<Scenario, OptionsError> {
    let mut config = base.clone();
    if kind == ScenarioKind::CrossVerifyOff {
        config.cross_verification = false;
    }
    let script = script_for(kind, &config);
    let mut entries = Vec::new();
    let mut scripts = BTreeMap::new();
    for case in cases {
        entries.extend(case_transcript(kind, case, pool, &config, &script)?);
        scripts.insert(case.case_id.clone(), script.clone());
    }
    Ok(Scenario { kind, config, transcript: Transcript::new(entries), scripts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::synth::builtin_label_pool;
    use crate::case_model::generate_cases;

    #[test]
    fn names_round_trip() {
        for kind in ScenarioKind::ALL {
            assert_eq!(kind.name().parse::<ScenarioKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn all_participate_cycle() {
        let script = script_for(ScenarioKind::AllParticipate, &RunConfig::default());
        assert_eq!(script.answers.len(), 16);
        assert_eq!(script.answers[&(AgentRole::Pathology, 1, 1)].targets, [AgentRole::Outpatient]);
        assert_eq!(script.answers[&(AgentRole::Outpatient, 2, 2)].targets, [AgentRole::Laboratory]);
    }

    #[test]
    fn role_trees_are_valid() {
        let cases = generate_cases(10, 3);
        for case in &cases {
            for role in AgentRole::SPECIALISTS {
                let tree = role_tree(case, role, &RunConfig::default().active_roles);
                assert!(crate::evidence_tree::validate_tree(&tree).is_empty(), "{tree}");
            }
        }
    }

    #[test]
    fn transcripts_are_case_scoped() {
        let cases = generate_cases(2, 1);
        let s = build_scenario(ScenarioKind::NoneParticipate, &cases, &builtin_label_pool(), &RunConfig::default())
            .unwrap();
        assert_eq!(s.transcript.entries.len(), 2 * 21);
        assert!(s.transcript.entries.iter().all(|e| e.case_id.is_some()));
    }
}

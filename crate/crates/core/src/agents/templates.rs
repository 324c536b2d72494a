use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::role::AgentRole;

/// Bumped whenever a shipped template changes; recorded in run traces.
pub const TEMPLATE_VERSION: &str = "tor-templates/1";

const BUILTIN: &[(&str, &str, &[&str])] = &[
    ("persona_outpatient", include_str!("../../templates/persona_outpatient.txt"), &[]),
    ("persona_laboratory", include_str!("../../templates/persona_laboratory.txt"), &[]),
    ("persona_radiology", include_str!("../../templates/persona_radiology.txt"), &[]),
    ("persona_pathology", include_str!("../../templates/persona_pathology.txt"), &[]),
    ("persona_moderator", include_str!("../../templates/persona_moderator.txt"), &[]),
    (
        "outpatient_initial",
        include_str!("../../templates/outpatient_initial.txt"),
        &[
            "retrieved_info",
            "age",
            "sex",
            "chief_complaints",
            "present_illness",
            "physical_examination",
            "additional_sections",
        ],
    ),
    (
        "outpatient_initial_freetext",
        include_str!("../../templates/outpatient_initial_freetext.txt"),
        &[
            "retrieved_info",
            "age",
            "sex",
            "chief_complaints",
            "present_illness",
            "physical_examination",
            "additional_sections",
        ],
    ),
    (
        "laboratory_initial",
        include_str!("../../templates/laboratory_initial.txt"),
        &["retrieved_info", "lab_results"],
    ),
    (
        "laboratory_initial_freetext",
        include_str!("../../templates/laboratory_initial_freetext.txt"),
        &["retrieved_info", "lab_results"],
    ),
    (
        "radiology_initial",
        include_str!("../../templates/radiology_initial.txt"),
        &["retrieved_info", "imaging_results"],
    ),
    (
        "radiology_initial_freetext",
        include_str!("../../templates/radiology_initial_freetext.txt"),
        &["retrieved_info", "imaging_results"],
    ),
    (
        "pathology_initial",
        include_str!("../../templates/pathology_initial.txt"),
        &["retrieved_info", "pathology_results"],
    ),
    (
        "pathology_initial_freetext",
        include_str!("../../templates/pathology_initial_freetext.txt"),
        &["retrieved_info", "pathology_results"],
    ),
    (
        "participate",
        include_str!("../../templates/participate.txt"),
        &["patient_case", "round_num", "turn_num", "doctor_opinions"],
    ),
    (
        "targets",
        include_str!("../../templates/targets.txt"),
        &["source_doctor", "peers", "patient_case", "round_num", "turn_num", "doctor_opinions"],
    ),
    (
        "opinion",
        include_str!("../../templates/opinion.txt"),
        &["source_doctor", "target_doctor", "patient_case", "round_num", "turn_num", "doctor_opinions"],
    ),
    (
        "update",
        include_str!("../../templates/update.txt"),
        &["doctor_type", "original_diagnosis", "feedback"],
    ),
    (
        "update_freetext",
        include_str!("../../templates/update_freetext.txt"),
        &["doctor_type", "original_diagnosis", "feedback"],
    ),
    ("final", include_str!("../../templates/final.txt"), &["patient_case", "doctor_opinions", "options"]),
    ("repair_format", include_str!("../../templates/repair_format.txt"), &["error"]),
    ("repair_yes_no", include_str!("../../templates/repair_yes_no.txt"), &[]),
];

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("slot regex"))
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} has no value for slot {{{slot}}}")]
    MissingSlot { template: String, slot: String },
    #[error("template {template:?} uses slot {{{slot}}}, which is never filled")]
    UnknownSlot { template: String, slot: String },
    #[error("reading template override {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Named prompt templates with `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
    overridden: BTreeSet<String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body, _)| (name.to_string(), body.trim_end_matches('\n').to_string()))
            .collect();
        TemplateSet { templates, overridden: BTreeSet::new() }
    }

    /// Built-ins, with any `<name>.txt` in `dir` replacing the shipped body.
    /// Files with other names are ignored.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for (name, _, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let body = fs::read_to_string(&path)
                .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
            set.templates.insert(name.to_string(), body.trim_end_matches('\n').to_string());
            set.overridden.insert(name.to_string());
        }
        Ok(set)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn overridden(&self) -> &BTreeSet<String> {
        &self.overridden
    }

    pub fn body(&self, name: &str) -> Result<&str, TemplateError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    /// Every template that references a slot the engine never fills.
    pub fn check(&self) -> Vec<TemplateError> {
        let mut problems = Vec::new();
        for (name, _, allowed) in BUILTIN {
            let body = &self.templates[*name];
            for cap in slot_regex().captures_iter(body) {
                let slot = &cap[1];
                if !allowed.contains(&slot) {
                    problems.push(TemplateError::UnknownSlot { template: name.to_string(), slot: slot.to_string() });
                }
            }
        }
        problems
    }

    /// Single-pass substitution; inserted values are never rescanned for slots.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let body = self.body(name)?;
        let mut out = String::with_capacity(body.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut last = 0;
        for cap in slot_regex().captures_iter(body) {
            let whole = cap.get(0).expect("match");
            let slot = &cap[1];
            let value = values
                .iter()
                .find(|(k, _)| *k == slot)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingSlot { template: name.to_string(), slot: slot.to_string() })?;
            out.push_str(&body[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&body[last..]);
        Ok(out)
    }

    pub fn persona(&self, role: AgentRole) -> Result<&str, TemplateError> {
        self.body(&format!("persona_{}", role.slug()))
    }
}

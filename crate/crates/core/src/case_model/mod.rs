//! Patient case records and the per-role views of them.

mod options;
pub mod synth;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::role::AgentRole;
use crate::text::normalize_label;

pub use options::{
    build_options, default_distractor_count, load_label_pool, option_letter, DiagnosisOptions,
    LabelPool, OptionItem, OptionsError, PoolError,
};
pub use synth::generate_cases;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "Male",
            Sex::Female => "Female",
        })
    }
}

/// One patient. An empty modality string means the examination was not performed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub age: u32,
    pub sex: Sex,
    pub chief_complaints: String,
    pub present_illness: String,
    pub physical_examination: String,
    pub lab_results: String,
    pub imaging_results: String,
    pub pathology_results: String,
    pub department: String,
    pub gold_labels: Vec<String>,
}

/// The eight data sections of a case (everything except id, department and labels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Age,
    Sex,
    ChiefComplaints,
    PresentIllness,
    PhysicalExamination,
    LabResults,
    ImagingResults,
    PathologyResults,
}

impl Section {
    pub const ALL: [Section; 8] = [
        Section::Age,
        Section::Sex,
        Section::ChiefComplaints,
        Section::PresentIllness,
        Section::PhysicalExamination,
        Section::LabResults,
        Section::ImagingResults,
        Section::PathologyResults,
    ];

    /// The record field this section comes from.
    pub fn field_name(self) -> &'static str {
        match self {
            Section::Age => "age",
            Section::Sex => "sex",
            Section::ChiefComplaints => "chief_complaints",
            Section::PresentIllness => "present_illness",
            Section::PhysicalExamination => "physical_examination",
            Section::LabResults => "lab_results",
            Section::ImagingResults => "imaging_results",
            Section::PathologyResults => "pathology_results",
        }
    }

    /// Heading used when the section is shown to a model.
    pub fn heading(self) -> &'static str {
        match self {
            Section::Age => "Age",
            Section::Sex => "Sex",
            Section::ChiefComplaints => "Chief-Complaints",
            Section::PresentIllness => "Present-Illness",
            Section::PhysicalExamination => "Physical-Examination",
            Section::LabResults => "Laboratory-Results",
            Section::ImagingResults => "Imaging-Results",
            Section::PathologyResults => "Pathology-Results",
        }
    }

    /// Sections a role reads when every role is active.
    pub fn owned_by(role: AgentRole) -> &'static [Section] {
        match role {
            AgentRole::Outpatient => &Section::ALL[..5],
            AgentRole::Laboratory => &[Section::LabResults],
            AgentRole::Radiology => &[Section::ImagingResults],
            AgentRole::Pathology => &[Section::PathologyResults],
            AgentRole::Moderator => &[],
        }
    }
}

impl CaseRecord {
    pub fn section_text(&self, section: Section) -> String {
        match section {
            Section::Age => self.age.to_string(),
            Section::Sex => self.sex.to_string(),
            Section::ChiefComplaints => self.chief_complaints.clone(),
            Section::PresentIllness => self.present_illness.clone(),
            Section::PhysicalExamination => self.physical_examination.clone(),
            Section::LabResults => self.lab_results.clone(),
            Section::ImagingResults => self.imaging_results.clone(),
            Section::PathologyResults => self.pathology_results.clone(),
        }
    }

    /// The data a model may see: the eight sections, without id, department or labels.
    pub fn patient_view(&self) -> Value {
        let mut map = Map::new();
        for section in Section::ALL {
            let value = match section {
                Section::Age => Value::from(self.age),
                _ => Value::from(self.section_text(section)),
            };
            map.insert(section.field_name().to_string(), value);
        }
        Value::Object(map)
    }
}

/// The sections handed to one specialist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoleInput {
    pub role: AgentRole,
    pub sections: Vec<(Section, String)>,
}

impl RoleInput {
    pub fn get(&self, section: Section) -> Option<&str> {
        self.sections.iter().find(|(s, _)| *s == section).map(|(_, t)| t.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case file is not a JSON array of records: {0}")]
    Malformed(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("record {record_index}: field `{field}`: {reason}")]
pub struct SchemaError {
    pub record_index: usize,
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

const TEXT_FIELDS: [&str; 7] = [
    "chief_complaints",
    "present_illness",
    "physical_examination",
    "lab_results",
    "imaging_results",
    "pathology_results",
    "department",
];

/// Every schema violation in one record value.
pub fn check_record(record_index: usize, value: &Value) -> Vec<SchemaError> {
    let err = |field: &str, reason: &str| SchemaError {
        record_index,
        field: field.to_string(),
        reason: reason.to_string(),
    };
    let Some(obj) = value.as_object() else {
        return vec![err("<record>", "not a JSON object")];
    };
    let mut out = Vec::new();
    match obj.get("case_id") {
        Some(Value::String(s)) if !s.is_empty() => {}
        Some(Value::String(_)) => out.push(err("case_id", "empty")),
        Some(_) => out.push(err("case_id", "not a string")),
        None => out.push(err("case_id", "missing")),
    }
    match obj.get("age") {
        Some(v) if v.as_u64().is_some_and(|a| a <= u64::from(u32::MAX)) => {}
        Some(_) => out.push(err("age", "not a non-negative integer")),
        None => out.push(err("age", "missing")),
    }
    match obj.get("sex").map(|v| v.as_str().map(str::to_lowercase)) {
        Some(Some(s)) if s == "male" || s == "female" => {}
        Some(_) => out.push(err("sex", "expected \"male\" or \"female\"")),
        None => out.push(err("sex", "missing")),
    }
    for field in TEXT_FIELDS {
        match obj.get(field) {
            Some(Value::String(_)) => {}
            Some(_) => out.push(err(field, "not a string")),
            None => out.push(err(field, "missing")),
        }
    }
    if let Some(Value::String(d)) = obj.get("department") {
        if d.trim().is_empty() {
            out.push(err("department", "empty"));
        }
    }
    match obj.get("gold_labels") {
        Some(Value::Array(items)) if items.is_empty() => out.push(err("gold_labels", "empty")),
        Some(Value::Array(items)) => {
            let mut seen = BTreeSet::new();
            for item in items {
                match item.as_str().map(normalize_label) {
                    Some(label) if label.is_empty() => {
                        out.push(err("gold_labels", "blank label"));
                    }
                    Some(label) => {
                        if !seen.insert(label) {
                            out.push(err("gold_labels", "duplicate label"));
                        }
                    }
                    None => out.push(err("gold_labels", "label is not a string")),
                }
            }
        }
        Some(_) => out.push(err("gold_labels", "not an array")),
        None => out.push(err("gold_labels", "missing")),
    }
    const KNOWN: [&str; 11] = [
        "case_id",
        "age",
        "sex",
        "chief_complaints",
        "present_illness",
        "physical_examination",
        "lab_results",
        "imaging_results",
        "pathology_results",
        "department",
        "gold_labels",
    ];
    for key in obj.keys() {
        if !KNOWN.contains(&key.as_str()) {
            out.push(err(key, "unknown field"));
        }
    }
    out
}

fn record_from_value(record_index: usize, value: Value) -> Result<CaseRecord, SchemaError> {
    if let Some(first) = check_record(record_index, &value).into_iter().next() {
        return Err(first);
    }
    let mut value = value;
    if let Some(sex) = value.get_mut("sex") {
        *sex = Value::from(sex.as_str().unwrap_or_default().to_lowercase());
    }
    serde_json::from_value(value).map_err(|e| SchemaError {
        record_index,
        field: "<record>".into(),
        reason: e.to_string(),
    })
}

/// Parses a case file's contents, failing on the first schema violation.
pub fn parse_cases(text: &str) -> Result<Vec<CaseRecord>, CaseError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CaseError::Malformed(e.to_string()))?;
    let Value::Array(items) = value else {
        return Err(CaseError::Malformed("top-level value is not an array".into()));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| record_from_value(i, v).map_err(CaseError::from))
        .collect()
}

pub fn load_cases(path: &Path) -> Result<Vec<CaseRecord>, CaseError> {
    let text = fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_cases(&text)
}

pub fn cases_to_json(cases: &[CaseRecord]) -> String {
    let mut out = serde_json::to_string_pretty(cases).expect("cases serialize");
    out.push('\n');
    out
}

pub fn save_cases(path: &Path, cases: &[CaseRecord]) -> Result<(), CaseError> {
    fs::write(path, cases_to_json(cases)).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Builds the input for `role`. Sections of inactive specialists are handed
/// to the outpatient doctor so no data is lost when roles are ablated.
pub fn slice_for_role(
    case: &CaseRecord,
    role: AgentRole,
    active_roles: &BTreeSet<AgentRole>,
) -> Result<RoleInput, SliceError> {
    if !active_roles.contains(&AgentRole::Outpatient) {
        return Err(SliceError::InvalidConfig("the outpatient role cannot be excluded".into()));
    }
    if !role.is_specialist() {
        return Err(SliceError::InvalidConfig("the moderator has no data slice".into()));
    }
    if !active_roles.contains(&role) {
        return Err(SliceError::InvalidConfig(format!("role {role} is not active")));
    }
    let mut sections: Vec<Section> = Section::owned_by(role).to_vec();
    if role == AgentRole::Outpatient {
        for other in &AgentRole::SPECIALISTS[1..] {
            if !active_roles.contains(other) {
                sections.extend_from_slice(Section::owned_by(*other));
            }
        }
    }
    Ok(RoleInput {
        role,
        sections: sections.into_iter().map(|s| (s, case.section_text(s))).collect(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample_case() -> CaseRecord {
        CaseRecord {
            case_id: "c1".into(),
            age: 63,
            sex: Sex::Female,
            chief_complaints: "Epigastric pain for 2 months".into(),
            present_illness: "Intermittent dull pain after meals".into(),
            physical_examination: "Mild epigastric tenderness".into(),
            lab_results: "Hb 98 g/L; CEA 12 ng/mL".into(),
            imaging_results: "CT: gastric antral wall thickening".into(),
            pathology_results: "Biopsy: moderately differentiated adenocarcinoma".into(),
            department: "Gastrointestinal Surgery".into(),
            gold_labels: vec!["Gastric cancer".into(), "Anemia".into()],
        }
    }

    fn all_roles() -> BTreeSet<AgentRole> {
        AgentRole::SPECIALISTS.into_iter().collect()
    }

    #[test]
    fn laboratory_sees_only_lab_results() {
        let input = slice_for_role(&sample_case(), AgentRole::Laboratory, &all_roles()).unwrap();
        assert_eq!(input.sections, vec![(Section::LabResults, "Hb 98 g/L; CEA 12 ng/mL".to_string())]);
    }

    #[test]
    fn lone_outpatient_gets_every_section() {
        let active = BTreeSet::from([AgentRole::Outpatient]);
        let input = slice_for_role(&sample_case(), AgentRole::Outpatient, &active).unwrap();
        let got: Vec<Section> = input.sections.iter().map(|(s, _)| *s).collect();
        assert_eq!(got, Section::ALL.to_vec());
    }

    #[test]
    fn inactive_sections_move_to_outpatient() {
        let active = BTreeSet::from([AgentRole::Outpatient, AgentRole::Laboratory]);
        let input = slice_for_role(&sample_case(), AgentRole::Outpatient, &active).unwrap();
        assert!(input.get(Section::ImagingResults).is_some());
        assert!(input.get(Section::PathologyResults).is_some());
        assert!(input.get(Section::LabResults).is_none());
    }

    #[test]
    fn slicing_rejects_bad_role_sets() {
        let no_outpatient = BTreeSet::from([AgentRole::Laboratory]);
        assert!(slice_for_role(&sample_case(), AgentRole::Laboratory, &no_outpatient).is_err());
        let active = BTreeSet::from([AgentRole::Outpatient]);
        assert!(slice_for_role(&sample_case(), AgentRole::Radiology, &active).is_err());
        assert!(slice_for_role(&sample_case(), AgentRole::Moderator, &all_roles()).is_err());
    }

    #[test]
    fn one_record_file_loads() {
        let text = cases_to_json(&[sample_case()]);
        assert_eq!(parse_cases(&text).unwrap(), vec![sample_case()]);
    }

    #[test]
    fn missing_gold_labels_is_a_schema_error() {
        let mut value = serde_json::to_value(sample_case()).unwrap();
        value.as_object_mut().unwrap().remove("gold_labels");
        let text = serde_json::to_string(&vec![value]).unwrap();
        match parse_cases(&text) {
            Err(CaseError::Schema(e)) => {
                assert_eq!(e.field, "gold_labels");
                assert_eq!(e.record_index, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_sex_is_rejected_and_case_is_ignored() {
        let mut value = serde_json::to_value(sample_case()).unwrap();
        value["sex"] = Value::from("Female");
        assert!(check_record(0, &value).is_empty());
        value["sex"] = Value::from("unknown");
        assert_eq!(check_record(0, &value)[0].field, "sex");
    }

    #[test]
    fn missing_department_is_one_violation() {
        let mut value = serde_json::to_value(sample_case()).unwrap();
        value.as_object_mut().unwrap().remove("department");
        let v = check_record(3, &value);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "department");
        assert_eq!(v[0].record_index, 3);
    }
}

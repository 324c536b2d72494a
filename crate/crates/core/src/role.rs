use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four specialists plus the moderator that makes the final call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Outpatient,
    Laboratory,
    Radiology,
    Pathology,
    Moderator,
}

impl AgentRole {
    /// Specialists in the fixed iteration order used throughout a run.
    pub const SPECIALISTS: [AgentRole; 4] = [
        AgentRole::Outpatient,
        AgentRole::Laboratory,
        AgentRole::Radiology,
        AgentRole::Pathology,
    ];

    pub fn is_specialist(self) -> bool {
        self != AgentRole::Moderator
    }

    /// Lower-case name used in call tags and file names.
    pub fn slug(self) -> &'static str {
        match self {
            AgentRole::Outpatient => "outpatient",
            AgentRole::Laboratory => "laboratory",
            AgentRole::Radiology => "radiology",
            AgentRole::Pathology => "pathology",
            AgentRole::Moderator => "moderator",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            AgentRole::Outpatient => "Outpatient",
            AgentRole::Laboratory => "Laboratory",
            AgentRole::Radiology => "Radiology",
            AgentRole::Pathology => "Pathology",
            AgentRole::Moderator => "Moderator",
        }
    }

    /// Words a model might use to name this role.
    pub(crate) fn aliases(self) -> &'static [&'static str] {
        match self {
            AgentRole::Outpatient => &["outpatient", "attending", "clinician"],
            AgentRole::Laboratory => &["laboratory", "lab"],
            AgentRole::Radiology => &["radiology", "radiologist", "imaging"],
            AgentRole::Pathology => &["pathology", "pathologist"],
            AgentRole::Moderator => &["moderator"],
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown agent role {0:?}")]
pub struct UnknownRole(pub String);

impl FromStr for AgentRole {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_lowercase();
        [AgentRole::Outpatient, AgentRole::Laboratory, AgentRole::Radiology, AgentRole::Pathology, AgentRole::Moderator]
            .into_iter()
            .find(|role| role.aliases().contains(&lower.as_str()))
            .ok_or_else(|| UnknownRole(s.to_string()))
    }
}

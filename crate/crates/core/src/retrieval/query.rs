use std::collections::BTreeMap;
use std::sync::Arc;

use super::{retrieve_top_k, tokenize, Index, RetrievedDoc};
use crate::case_model::{RoleInput, Section};
use crate::role::AgentRole;

pub const QUERY_TOKEN_BUDGET: usize = 256;
pub const SNIPPET_TOKEN_BUDGET: usize = 512;

/// Inserted in place of retrieved documents when nothing was retrieved.
pub const NO_REFERENCES: &str = "No references retrieved.";

/// Retrieval query for a role: its section texts (demographics excluded),
/// outpatient complaints and history first, tokenized and cut to `budget` tokens.
pub fn build_query(input: &RoleInput, budget: usize) -> String {
    let mut order: Vec<Section> = Vec::new();
    if input.role == AgentRole::Outpatient {
        order.extend([Section::ChiefComplaints, Section::PresentIllness]);
    }
    for (section, _) in &input.sections {
        if !order.contains(section) {
            order.push(*section);
        }
    }
    order
        .into_iter()
        .filter(|s| !matches!(s, Section::Age | Section::Sex))
        .filter_map(|s| input.get(s))
        .flat_map(tokenize)
        .take(budget)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps the original text up to the end of its `limit`-th token.
pub fn truncate_tokens(text: &str, limit: usize) -> String {
    let mut seen = 0;
    let mut in_token = false;
    for (pos, c) in text.char_indices() {
        let is_token_char = c.is_alphanumeric();
        if is_token_char && !in_token {
            if seen == limit {
                return text[..pos].trim().to_string();
            }
            seen += 1;
        }
        in_token = is_token_char;
    }
    text.trim().to_string()
}

/// Text for the `{retrieved_info}` prompt slot.
pub fn format_retrieved(docs: &[RetrievedDoc]) -> String {
    if docs.is_empty() {
        return NO_REFERENCES.to_string();
    }
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] {} ({})\n{}", i + 1, d.title, d.doc_id, d.snippet))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Indexes available to the agents: an optional shared index plus per-role overrides.
#[derive(Debug, Clone, Default)]
pub struct RetrievalSet {
    pub shared: Option<Arc<Index>>,
    pub per_role: BTreeMap<AgentRole, Arc<Index>>,
}

impl RetrievalSet {
    pub fn shared(index: Index) -> Self {
        RetrievalSet { shared: Some(Arc::new(index)), per_role: BTreeMap::new() }
    }

    pub fn index_for(&self, role: AgentRole) -> Option<&Index> {
        self.per_role.get(&role).or(self.shared.as_ref()).map(Arc::as_ref)
    }

    /// Top-`k` documents for a role; empty when the query is empty or no index applies.
    pub fn retrieve(&self, input: &RoleInput, k: usize, query_budget: usize, snippet_budget: usize) -> Vec<RetrievedDoc> {
        let query = build_query(input, query_budget);
        match self.index_for(input.role) {
            Some(index) if !query.is_empty() => retrieve_top_k(index, &query, k, snippet_budget),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(role: AgentRole, sections: &[(Section, &str)]) -> RoleInput {
        RoleInput { role, sections: sections.iter().map(|(s, t)| (*s, t.to_string())).collect() }
    }

    #[test]
    fn outpatient_query_leads_with_complaints() {
        let inp = input(
            AgentRole::Outpatient,
            &[
                (Section::Age, "63"),
                (Section::Sex, "Female"),
                (Section::PhysicalExamination, "tenderness"),
                (Section::ChiefComplaints, "Epigastric pain"),
                (Section::PresentIllness, "after meals"),
            ],
        );
        assert_eq!(build_query(&inp, 256), "epigastric pain after meals tenderness");
        assert_eq!(build_query(&inp, 256), build_query(&inp, 256));
    }

    #[test]
    fn empty_sections_give_empty_query_and_sentinel() {
        let inp = input(AgentRole::Pathology, &[(Section::PathologyResults, "")]);
        assert_eq!(build_query(&inp, 256), "");
        let set = RetrievalSet::default();
        assert!(set.retrieve(&inp, 3, 256, 512).is_empty());
        assert_eq!(format_retrieved(&[]), NO_REFERENCES);
    }

    #[test]
    fn budget_is_respected() {
        let long = "word ".repeat(5000);
        let inp = input(AgentRole::Laboratory, &[(Section::LabResults, &long)]);
        assert_eq!(tokenize(&build_query(&inp, 256)).len(), 256);
    }

    #[test]
    fn truncation_keeps_original_text() {
        assert_eq!(truncate_tokens("Hb 92 g/L (low); MCV 74 fL.", 3), "Hb 92 g/");
        assert_eq!(truncate_tokens("a b", 5), "a b");
        assert_eq!(truncate_tokens("  a, b  ", 1), "a,");
    }
}

//! Parsing of the moderator's JSON verdict.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::case_model::DiagnosisOptions;
use crate::evidence_tree::{parse_tree, validate_tree, EvidenceTree};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalDecision {
    /// Valid letters in option order.
    pub selected_letters: Vec<String>,
    pub merged_tree: EvidenceTree,
    pub raw: String,
    /// Letter-like tokens that named no option.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_letters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionParseError {
    #[error("{0}")]
    Unparseable(String),
    #[error("no selected option names a listed letter")]
    NoValidLetters,
}

/// Contents of the first fenced block, or the text itself when unfenced.
pub fn strip_fences(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    // Skip an info string such as `json`.
    let body = match after.find('\n') {
        Some(nl) if after[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &after[nl + 1..],
        _ => after,
    };
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Escapes raw control characters inside string literals, which models
/// often emit when a JSON string holds a multi-line tree.
fn escape_string_controls(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let (mut in_string, mut escaped) = (false, false);
    for c in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
                out.push(c);
                continue;
            }
            match c {
                '\\' => {
                    escaped = true;
                    out.push(c);
                }
                '"' => {
                    in_string = false;
                    out.push(c);
                }
                '\n' => out.push_str("\\n"),
                '\r' => {}
                '\t' => out.push_str("\\t"),
                c if c.is_control() => {}
                c => out.push(c),
            }
        } else {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
        }
    }
    out
}

fn json_object(raw: &str) -> Result<serde_json::Map<String, Value>, DecisionParseError> {
    let body = strip_fences(raw);
    let (Some(start), Some(end)) = (body.find('{'), body.rfind('}')) else {
        return Err(DecisionParseError::Unparseable("no JSON object found".into()));
    };
    if end < start {
        return Err(DecisionParseError::Unparseable("no JSON object found".into()));
    }
    let candidate = &body[start..=end];
    let value: Value = serde_json::from_str(candidate)
        .or_else(|_| serde_json::from_str(&escape_string_controls(candidate)))
        .map_err(|e| DecisionParseError::Unparseable(format!("invalid JSON: {e}")))?;
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(DecisionParseError::Unparseable("top-level JSON value is not an object".into())),
    }
}

fn is_separator_word(token: &str) -> bool {
    matches!(token.to_ascii_lowercase().as_str(), "and" | "or" | "option" | "options")
}

/// Splits selections such as `"A,C"`, `"AC"`, `"A and C"`, `"(B)"` into
/// `(valid letters in option order, dropped letter-like tokens)`.
pub fn parse_letters(selections: &[String], options: &DiagnosisOptions) -> (Vec<String>, Vec<String>) {
    let mut valid = Vec::new();
    let mut dropped = Vec::new();
    let take = |letter: String, valid: &mut Vec<String>| {
        if !valid.contains(&letter) {
            valid.push(letter);
        }
    };
    for selection in selections {
        for token in selection.split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | '/' | '&' | '+' | '、' | '，')) {
            let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
            // "A:Hypertension" or "A.Gastritis" name the letter before the punctuation.
            let head: String = trimmed.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
            if head.is_empty() || is_separator_word(&head) {
                continue;
            }
            let upper = head.to_ascii_uppercase();
            if options.contains(&upper) {
                take(upper, &mut valid);
            } else if head.chars().all(|c| c.is_ascii_uppercase()) {
                if head.chars().all(|c| options.contains(&c.to_string())) {
                    for c in head.chars() {
                        take(c.to_string(), &mut valid);
                    }
                } else {
                    dropped.push(head);
                }
            }
        }
    }
    valid.sort_by_key(|l| options.position(l));
    (valid, dropped)
}

fn parse_evi_tree(value: Option<&Value>) -> Result<EvidenceTree, DecisionParseError> {
    let tree = match value {
        None => return Err(DecisionParseError::Unparseable("missing key \"evi_tree\"".into())),
        Some(Value::String(text)) => {
            parse_tree(text).map_err(|e| DecisionParseError::Unparseable(format!("evi_tree: {e}")))?
        }
        Some(other @ Value::Object(_)) => serde_json::from_value(other.clone())
            .map_err(|e| DecisionParseError::Unparseable(format!("evi_tree object: {e}")))?,
        Some(_) => return Err(DecisionParseError::Unparseable("evi_tree must be a string or object".into())),
    };
    if let Some(v) = validate_tree(&tree).first() {
        return Err(DecisionParseError::Unparseable(format!("evi_tree: {v}")));
    }
    Ok(tree)
}

pub fn parse_decision(raw: &str, options: &DiagnosisOptions) -> Result<FinalDecision, DecisionParseError> {
    let map = json_object(raw)?;
    let selections: Vec<String> = match map.get("selected_options") {
        None => return Err(DecisionParseError::Unparseable("missing key \"selected_options\"".into())),
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(DecisionParseError::Unparseable("selected_options entries must be strings".into())),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => {
            return Err(DecisionParseError::Unparseable("selected_options must be a string or a list".into()))
        }
    };
    let merged_tree = parse_evi_tree(map.get("evi_tree"))?;
    let (selected_letters, dropped_letters) = parse_letters(&selections, options);
    if selected_letters.is_empty() {
        return Err(DecisionParseError::NoValidLetters);
    }
    Ok(FinalDecision { selected_letters, merged_tree, raw: raw.to_string(), dropped_letters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::OptionItem;

    fn options(n: usize) -> DiagnosisOptions {
        DiagnosisOptions {
            items: (0..n)
                .map(|i| OptionItem {
                    letter: crate::case_model::option_letter(i),
                    label: format!("Disease {i}"),
                    is_gold: i == 0,
                })
                .collect(),
        }
    }

    const TREE: &str = "Reasoning Pathway\n    Gastritis\n        Analysis: fits\n            Evidence 1: pain\n";

    fn payload(sel: &str) -> String {
        serde_json::json!({ "selected_options": sel, "evi_tree": TREE }).to_string()
    }

    fn letters(sel: &[&str], n: usize) -> (Vec<String>, Vec<String>) {
        parse_letters(&sel.iter().map(|s| s.to_string()).collect::<Vec<_>>(), &options(n))
    }

    #[test]
    fn letter_forms() {
        assert_eq!(letters(&["A,C"], 4).0, ["A", "C"]);
        assert_eq!(letters(&["CA"], 4).0, ["A", "C"]);
        assert_eq!(letters(&["C", "A"], 4).0, ["A", "C"]);
        assert_eq!(letters(&["A and (D)"], 4).0, ["A", "D"]);
        assert_eq!(letters(&["B. Disease 1"], 4).0, ["B"]);
        assert_eq!(letters(&["a, b"], 4).0, ["A", "B"]);
        assert_eq!(letters(&["A, Z"], 4), (vec!["A".to_string()], vec!["Z".to_string()]));
    }

    #[test]
    fn decision_with_comma_letters() {
        let d = parse_decision(&payload("A,C"), &options(4)).unwrap();
        assert_eq!(d.selected_letters, ["A", "C"]);
        assert_eq!(d.merged_tree.entries[0].disease, "Gastritis");
    }

    #[test]
    fn only_invalid_letters() {
        assert_eq!(parse_decision(&payload("Z"), &options(4)), Err(DecisionParseError::NoValidLetters));
    }

    #[test]
    fn fenced_and_prosey_payloads() {
        let fenced = format!("Here you go:\n```json\n{}\n```\nThanks", payload("B"));
        assert_eq!(parse_decision(&fenced, &options(4)).unwrap().selected_letters, ["B"]);
        let bare_fence = format!("```\n{}\n```", payload("B"));
        assert_eq!(parse_decision(&bare_fence, &options(4)).unwrap().selected_letters, ["B"]);
    }

    #[test]
    fn raw_newlines_inside_strings_are_tolerated() {
        let raw = format!("{{\"selected_options\": [\"A\"], \"evi_tree\": \"{}\"}}", TREE);
        assert!(raw.contains('\n'));
        assert_eq!(parse_decision(&raw, &options(2)).unwrap().selected_letters, ["A"]);
    }

    #[test]
    fn structured_tree_object() {
        let tree = parse_tree(TREE).unwrap();
        let raw = serde_json::json!({"selected_options": ["A"], "evi_tree": tree}).to_string();
        assert_eq!(parse_decision(&raw, &options(2)).unwrap().merged_tree, tree);
    }

    #[test]
    fn unparseable_shapes() {
        for raw in ["no json here", "[1,2]", "{\"evi_tree\": \"x\"}", "{\"selected_options\": 3, \"evi_tree\": \"\"}"] {
            assert!(matches!(parse_decision(raw, &options(2)), Err(DecisionParseError::Unparseable(_))), "{raw}");
        }
    }
}

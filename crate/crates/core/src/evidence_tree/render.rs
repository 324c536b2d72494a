use std::fmt::Write;

use super::{ensure_valid, EvidenceTree, ValidationError};

const INDENT: &str = "    ";

/// Canonical text: title, then diseases, `Analysis:` and `Evidence k:` lines
/// each indented one further 4-space level. Output ends with a newline.
pub fn render_tree(tree: &EvidenceTree) -> Result<String, ValidationError> {
    ensure_valid(tree)?;
    Ok(render_unchecked(tree))
}

pub(crate) fn render_unchecked(tree: &EvidenceTree) -> String {
    let mut out = String::new();
    out.push_str(&tree.title);
    out.push('\n');
    for entry in &tree.entries {
        let _ = writeln!(out, "{INDENT}{}", entry.disease);
        let _ = writeln!(out, "{INDENT}{INDENT}Analysis: {}", entry.analysis);
        for item in &entry.evidence {
            let _ = writeln!(out, "{INDENT}{INDENT}{INDENT}Evidence {}: {}", item.index, item.text);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{parse_tree, DiagnosisEntry, Rule};
    use super::*;

    fn figure_tree() -> EvidenceTree {
        EvidenceTree::new(
            "Reasoning Pathway",
            vec![
                DiagnosisEntry::new(
                    "Disease 1",
                    "Brief explanation of the reasoning process.",
                    ["Abnormal Finding 1.", "Abnormal Finding 2.", "Abnormal Finding 3."],
                ),
                DiagnosisEntry::new(
                    "Disease 2",
                    "Brief explanation of the reasoning process.",
                    ["Abnormal Finding 1.", "Abnormal Finding 2.", "Abnormal Finding 3."],
                ),
            ],
        )
    }

    #[test]
    fn two_disease_figure_has_two_level_two_nodes() {
        let text = render_tree(&figure_tree()).unwrap();
        let level_two = text
            .lines()
            .filter(|l| l.starts_with(INDENT) && !l[INDENT.len()..].starts_with(' '))
            .count();
        assert_eq!(level_two, 2);
        assert!(text.contains("\n        Analysis: Brief"));
        assert!(text.contains("\n            Evidence 3: Abnormal Finding 3.\n"));
    }

    #[test]
    fn empty_tree_is_rejected() {
        let err = render_tree(&EvidenceTree::new("T", vec![])).unwrap_err();
        assert_eq!(err.violations[0].rule, Rule::NoEntries);
    }

    #[test]
    fn render_parse_render_is_a_fixed_point() {
        let once = render_tree(&figure_tree()).unwrap();
        let twice = render_tree(&parse_tree(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
    }
}

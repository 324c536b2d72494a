//! Lenient reader for model-emitted evidence trees.
//!
//! Lines are classified by content first (`Analysis:` / `Evidence N:` /
//! anything else) and by indentation second. Accepted layouts include the
//! canonical 4-space form, tabs, list bullets, box-drawing trees and the
//! dirtree `.N text.` notation. Prose before the title line and after the
//! last entry is dropped.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::{DiagnosisEntry, EvidenceItem, EvidenceTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: no title line found")]
    NoTitle { line: usize },
    #[error("line {line}: no diagnosis entries found")]
    NoDiagnoses { line: usize },
    #[error("line {line}: malformed entry: {reason}")]
    MalformedEntry { line: usize, reason: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::NoTitle { line }
            | ParseError::NoDiagnoses { line }
            | ParseError::MalformedEntry { line, .. } => *line,
        }
    }
}

static DIRTREE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\.(\d{1,2})\s+(.*)$").unwrap());
static NUMBERED_BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{1,3}[.)]\s+").unwrap());
static HEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^#{1,6}\s+").unwrap());
static ANALYSIS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^analysis\s*[:：]\s*(.*)$").unwrap());
static EVIDENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^evidence(?:\s*\d+)?\s*[:：]\s*(.*)$").unwrap());
static EMBEDDED_EVIDENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bevidence\s*\d+\s*[:：]").unwrap());

const BULLETS: [&str; 6] = ["- ", "* ", "+ ", "• ", "· ", "– "];

#[derive(Debug)]
enum Kind {
    Other(String),
    Analysis(String),
    Evidence(Vec<String>),
}

#[derive(Debug)]
struct Line {
    number: usize,
    depth: usize,
    dirtree: Option<u8>,
    kind: Kind,
}

impl Line {
    fn is_keyword(&self) -> bool {
        !matches!(self.kind, Kind::Other(_))
    }
}

fn is_tree_glyph(c: char) -> bool {
    matches!(c, '│' | '├' | '└' | '─' | '┬' | '┃' | '┣' | '┗' | '━')
}

/// Splits a raw line into (indent width, dirtree level, marker-free content).
fn scan(raw: &str) -> Option<(usize, Option<u8>, String)> {
    let mut depth = 0;
    let mut rest = raw;
    for (pos, c) in raw.char_indices() {
        match c {
            '\t' => depth += 4,
            c if c == ' ' || c == '\u{a0}' || is_tree_glyph(c) => depth += 1,
            _ => {
                rest = &raw[pos..];
                break;
            }
        }
        rest = &raw[pos + c.len_utf8()..];
    }

    // Markers are stripped to a fixed point so the content never starts with
    // something a second scan would strip again. Only a leading dirtree
    // marker sets the level.
    let unbolded = rest.replace("**", "");
    let mut dirtree = None;
    let mut content: &str = &unbolded;
    let mut at_start = true;
    loop {
        let before = content;
        if let Some(caps) = DIRTREE.captures(content) {
            if at_start {
                dirtree = caps[1].parse::<u8>().ok();
            }
            content = caps.get(2).map_or("", |m| m.as_str());
        }
        at_start = false;
        for bullet in BULLETS {
            if let Some(stripped) = content.strip_prefix(bullet) {
                content = stripped;
            }
        }
        if let Some(m) = NUMBERED_BULLET.find(content) {
            content = &content[m.end()..];
        }
        if let Some(m) = HEADING.find(content) {
            content = &content[m.end()..];
        }
        content = content.trim_start_matches(|c: char| c.is_whitespace() || is_tree_glyph(c));
        if content == before {
            break;
        }
    }
    let content = content.trim();
    if content.is_empty() || content == "-" || content == "*" {
        return None;
    }
    Some((depth, dirtree, content.to_string()))
}

fn split_evidence(tail: &str) -> Vec<String> {
    let markers: Vec<_> = EMBEDDED_EVIDENCE.find_iter(tail).collect();
    if markers.is_empty() {
        return vec![tail.trim().to_string()];
    }
    let mut pieces = Vec::with_capacity(markers.len() + 1);
    pieces.push(&tail[..markers[0].start()]);
    for (i, m) in markers.iter().enumerate() {
        let end = markers.get(i + 1).map_or(tail.len(), |next| next.start());
        pieces.push(&tail[m.end()..end]);
    }
    pieces
        .into_iter()
        .map(|p| p.trim().trim_end_matches([',', ';', '，', '；']).trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn classify(content: &str, dirtree: Option<u8>) -> Kind {
    if let Some(caps) = ANALYSIS.captures(content) {
        return Kind::Analysis(caps[1].trim().to_string());
    }
    if let Some(caps) = EVIDENCE.captures(content) {
        return Kind::Evidence(split_evidence(&caps[1]));
    }
    match dirtree {
        Some(level) if level <= 2 => {
            Kind::Other(content.strip_suffix('.').unwrap_or(content).trim_end().to_string())
        }
        _ => Kind::Other(content.to_string()),
    }
}

fn lines_of(text: &str) -> Vec<Line> {
    // A bare carriage return ends a line too; left inside a line it would
    // survive into the tree and break rendering.
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let (depth, dirtree, content) = scan(raw)?;
            let depth = match dirtree {
                Some(level) => usize::from(level.saturating_sub(1)) * 4,
                None => depth,
            };
            let kind = classify(&content, dirtree);
            Some(Line { number: i + 1, depth, dirtree, kind })
        })
        .collect()
}

/// True when `s` renders as a title or disease line and reads back unchanged.
pub(crate) fn is_canonical_heading(s: &str) -> bool {
    single_line_stable(s) && matches!(classify(s, None), Kind::Other(ref c) if c == s)
}

/// True when `s` survives rendering after an `Analysis:` or `Evidence N:` prefix.
pub(crate) fn is_canonical_body(s: &str) -> bool {
    s == s.trim() && !s.contains(['\n', '\r']) && !s.contains("**") && !EMBEDDED_EVIDENCE.is_match(s)
}

fn single_line_stable(s: &str) -> bool {
    !s.contains(['\n', '\r'])
        && matches!(scan(s), Some((0, None, ref content)) if content == s)
}

struct Draft {
    line: usize,
    disease: String,
    analysis: Option<String>,
    evidence: Vec<String>,
}

impl Draft {
    fn append(&mut self, extra: &str) {
        let target = if let Some(last) = self.evidence.last_mut() {
            last
        } else if let Some(analysis) = self.analysis.as_mut() {
            analysis
        } else {
            &mut self.disease
        };
        if !target.is_empty() {
            target.push(' ');
        }
        target.push_str(extra);
    }

    fn finish(self) -> Result<DiagnosisEntry, ParseError> {
        let malformed = |reason: &str| ParseError::MalformedEntry {
            line: self.line,
            reason: format!("{reason} for {:?}", self.disease),
        };
        // Evidence markers written inside the analysis (or folded into it from a
        // continuation line) start the evidence list.
        let raw_analysis = self.analysis.as_deref().unwrap_or("");
        let (analysis, spilled) = match EMBEDDED_EVIDENCE.find(raw_analysis) {
            Some(m) => (&raw_analysis[..m.start()], split_evidence(&raw_analysis[m.start()..])),
            None => (raw_analysis, Vec::new()),
        };
        let analysis = analysis.trim();
        if analysis.is_empty() {
            return Err(malformed("missing analysis"));
        }
        let analysis = analysis.to_string();
        let evidence: Vec<String> = spilled
            .into_iter()
            .chain(self.evidence.iter().flat_map(|e| split_evidence(e)))
            .map(|e| e.trim().to_string())
            .filter(|e| !e.is_empty())
            .collect();
        if evidence.is_empty() {
            return Err(malformed("missing evidence"));
        }
        Ok(DiagnosisEntry {
            disease: self.disease,
            analysis,
            evidence: EvidenceItem::numbered(evidence),
        })
    }
}

/// Reads an evidence tree out of raw model output.
///
/// Evidence items are renumbered 1..n regardless of the numbers the model
/// wrote. Errors carry the 1-based line number of the offending input line.
pub fn parse_tree(text: &str) -> Result<EvidenceTree, ParseError> {
    let lines = lines_of(text);
    let Some(first_other) = lines.iter().position(|l| !l.is_keyword()) else {
        return Err(ParseError::NoTitle { line: lines.first().map_or(1, |l| l.number) });
    };
    let Some(anchor) = lines.iter().position(Line::is_keyword) else {
        return Err(ParseError::NoDiagnoses { line: lines[first_other].number });
    };
    let Some(first_disease) = lines[..anchor].iter().rposition(|l| !l.is_keyword()) else {
        return Err(ParseError::NoTitle { line: lines[anchor].number });
    };
    let disease_depth = lines[first_disease].depth;
    let before = &lines[..first_disease];
    let title_pos = before
        .iter()
        .rposition(|l| !l.is_keyword() && l.depth < disease_depth)
        .or_else(|| before.iter().rposition(|l| !l.is_keyword()));
    let Some(title_pos) = title_pos else {
        return Err(ParseError::NoTitle { line: lines[first_disease].number });
    };
    let Kind::Other(title) = &lines[title_pos].kind else { unreachable!() };

    let last_keyword = lines.iter().rposition(Line::is_keyword).unwrap_or(anchor);
    let mut drafts: Vec<Draft> = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(first_disease) {
        match &line.kind {
            Kind::Other(content) => {
                let nested = match line.dirtree {
                    Some(level) => level > 2,
                    None => line.depth > disease_depth,
                };
                if nested && !drafts.is_empty() {
                    drafts.last_mut().unwrap().append(content);
                    continue;
                }
                let opens_entry = lines.get(i + 1).is_some_and(Line::is_keyword);
                if opens_entry && line.dirtree != Some(1) {
                    drafts.push(Draft {
                        line: line.number,
                        disease: content.clone(),
                        analysis: None,
                        evidence: Vec::new(),
                    });
                } else if i > last_keyword {
                    break;
                } else {
                    return Err(ParseError::MalformedEntry {
                        line: line.number,
                        reason: format!("diagnosis {content:?} has no analysis"),
                    });
                }
            }
            Kind::Analysis(text) => {
                let draft = drafts.last_mut().expect("first line is a diagnosis");
                if draft.analysis.is_some() {
                    return Err(ParseError::MalformedEntry {
                        line: line.number,
                        reason: "second analysis in one entry".into(),
                    });
                }
                draft.analysis = Some(text.clone());
            }
            Kind::Evidence(items) => {
                let draft = drafts.last_mut().expect("first line is a diagnosis");
                draft.evidence.extend(items.iter().cloned());
            }
        }
    }

    let entry_lines: Vec<usize> = drafts.iter().map(|d| d.line).collect();
    let entries = drafts.into_iter().map(Draft::finish).collect::<Result<Vec<_>, _>>()?;
    let tree = EvidenceTree { title: title.clone(), entries };
    // Accepted text must always render, so structural violations (empty or
    // duplicate labels) are parse errors too.
    if let Some(v) = super::validate_tree(&tree).into_iter().next() {
        let line = v.entry.map_or(lines[title_pos].number, |i| entry_lines[i]);
        return Err(ParseError::MalformedEntry { line, reason: v.to_string() });
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIGURE: &str = "\
Chief Complaints Clinical Reasoning Pathway
    Disease 1
        Analysis: Brief explanation of the reasoning process.
            Evidence 1: Chief Complaints.
            Evidence 2: Medical History.
";

    #[test]
    fn canonical_single_disease() {
        let tree = parse_tree(FIGURE).unwrap();
        assert_eq!(tree.title, "Chief Complaints Clinical Reasoning Pathway");
        assert_eq!(tree.entries.len(), 1);
        assert_eq!(tree.entries[0].disease, "Disease 1");
        assert_eq!(tree.entries[0].evidence.len(), 2);
        assert_eq!(tree.entries[0].evidence[1].text, "Medical History.");
    }

    #[test]
    fn inline_evidence_list_is_split() {
        let text = "T\nDisease 1\nAnalysis: a\nEvidence 1: fever, Evidence 2: cough";
        let tree = parse_tree(text).unwrap();
        let texts: Vec<_> = tree.entries[0].evidence.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["fever", "cough"]);
    }

    #[test]
    fn dirtree_notation_from_prompt_tables() {
        let text = "\
.1 Laboratory Test Clinical Reasoning Pathway.
.2 Anemia.
.3 Analysis: Low haemoglobin.
.4 Evidence 1: Hb 85 g/L.
.4 Evidence 3: MCV 70 fL.
.2 Hypokalemia.
.3 Analysis: Low potassium.
.4 Evidence 1: K 3.0 mmol/L.";
        let tree = parse_tree(text).unwrap();
        assert_eq!(tree.title, "Laboratory Test Clinical Reasoning Pathway");
        assert_eq!(tree.entries[0].disease, "Anemia");
        assert_eq!(tree.entries[0].evidence[1].index, 2);
        assert_eq!(tree.entries[1].disease, "Hypokalemia");
    }

    #[test]
    fn prose_before_and_after_is_dropped() {
        let text = format!("Sure, here is the tree you asked for:\n\n{FIGURE}\nLet me know if you need more.");
        let tree = parse_tree(&text).unwrap();
        assert_eq!(tree, parse_tree(FIGURE).unwrap());
    }

    #[test]
    fn markdown_bullets_and_box_drawing() {
        let text = "\
**Imaging Test Clinical Reasoning Pathway**
├── Hepatic cyst
│   ├── Analysis: Round anechoic lesion.
│   │   ├── Evidence 1: 2 cm cyst in segment VI
- Cholecystitis
  - Analysis: Thickened wall.
    - Evidence 1: Wall 5 mm";
        let tree = parse_tree(text).unwrap();
        assert_eq!(tree.title, "Imaging Test Clinical Reasoning Pathway");
        assert_eq!(tree.labels().len(), 2);
    }

    #[test]
    fn continuation_lines_join_the_previous_item() {
        let text = "T\n    D\n        Analysis: first part\n          second part\n            Evidence 1: e";
        let tree = parse_tree(text).unwrap();
        assert_eq!(tree.entries[0].analysis, "first part second part");
    }

    #[test]
    fn error_kinds_carry_lines() {
        assert_eq!(parse_tree(""), Err(ParseError::NoTitle { line: 1 }));
        assert_eq!(parse_tree("just prose\nmore prose"), Err(ParseError::NoDiagnoses { line: 1 }));
        assert!(matches!(parse_tree("Analysis: x"), Err(ParseError::NoTitle { .. })));
        let missing_evidence = "T\nD1\nAnalysis: a\nD2\nAnalysis: b\nEvidence 1: e";
        assert_eq!(parse_tree(missing_evidence).unwrap_err().line(), 2);
        let orphan = "T\nD1\nAnalysis: a\nEvidence 1: e\nD2\nD3\nAnalysis: b\nEvidence 1: e";
        assert!(matches!(parse_tree(orphan), Err(ParseError::MalformedEntry { line: 5, .. })));
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use super::{BatchOutcome, CaseResult};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{0} already exists and is not empty; pass --force to overwrite")]
    Exists(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub force: bool,
    /// Resolved configuration, written to `config.json` and each trace's header line.
    pub header: Option<Value>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.display().to_string(), source }
}

/// Case ids are free text; keep file names portable.
fn file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// `{case_id, selected_options, evi_tree, metrics}` for one case.
pub fn result_json(result: &CaseResult) -> Value {
    let m = result.score.metrics();
    let labels: Vec<&str> = result
        .final_decision
        .selected_letters
        .iter()
        .filter_map(|l| result.options.items.iter().find(|i| &i.letter == l).map(|i| i.label.as_str()))
        .collect();
    json!({
        "case_id": result.case_id,
        "selected_options": result.final_decision.selected_letters,
        "selected_labels": labels,
        "evi_tree": result.final_decision.merged_tree.to_json(),
        "metrics": {
            "tp": result.score.tp,
            "fp": result.score.fp,
            "fn": result.score.fn_,
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
        },
    })
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}

fn write(path: PathBuf, contents: &str) -> Result<(), OutputError> {
    fs::write(&path, contents).map_err(io(&path))
}

/// Lays out a batch under `dir`:
/// `results/<case>.json`, `traces/<case>.jsonl`, `report.json`, `report.txt`,
/// `failures.json`, and `config.json` when a header is given.
pub fn write_outputs(dir: &Path, outcome: &BatchOutcome, options: &OutputOptions) -> Result<(), OutputError> {
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(io(dir))?.next().is_some();
        if occupied && !options.force {
            return Err(OutputError::Exists(dir.display().to_string()));
        }
        for sub in ["results", "traces"] {
            let p = dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(io(&p))?;
            }
        }
        for file in ["report.json", "report.txt", "failures.json", "config.json"] {
            let p = dir.join(file);
            if p.exists() {
                fs::remove_file(&p).map_err(io(&p))?;
            }
        }
    }
    let results_dir = dir.join("results");
    let traces_dir = dir.join("traces");
    fs::create_dir_all(&results_dir).map_err(io(&results_dir))?;
    fs::create_dir_all(&traces_dir).map_err(io(&traces_dir))?;

    let header_line = options.header.as_ref().map(|h| {
        let mut line = serde_json::to_string(&json!({ "phase": "header", "tag": "config", "config": h }))
            .expect("header serializes");
        line.push('\n');
        line
    });
    if let Some(h) = &options.header {
        write(dir.join("config.json"), &pretty(h))?;
    }

    for result in &outcome.results {
        let stem = file_stem(&result.case_id);
        write(results_dir.join(format!("{stem}.json")), &pretty(&result_json(result)))?;
        let mut trace = header_line.clone().unwrap_or_default();
        trace.push_str(&result.trace.to_jsonl());
        write(traces_dir.join(format!("{stem}.jsonl")), &trace)?;
    }
    for failure in &outcome.failures {
        let stem = file_stem(&failure.case_id);
        let mut trace = header_line.clone().unwrap_or_default();
        trace.push_str(&failure.trace.to_jsonl());
        write(traces_dir.join(format!("{stem}.jsonl")), &trace)?;
    }

    let failures: Vec<Value> = outcome
        .failures
        .iter()
        .map(|f| json!({ "case_id": f.case_id, "error": f.kind.to_string() }))
        .collect();
    write(dir.join("failures.json"), &pretty(&Value::from(failures)))?;

    if let Some(report) = &outcome.report {
        write(dir.join("report.json"), &report.to_json())?;
        write(dir.join("report.txt"), &report.to_table())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_portable() {
        assert_eq!(file_stem("syn-7-0001"), "syn-7-0001");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::ArgMatches;
use serde_json::Value;
use tor_core::agents::TemplateSet;
use tor_core::backend::{
    BackendProvider, RecordingProvider, RemoteBackend, ScriptedProvider, SharedProvider, Transcript,
};
use tor_core::case_model::synth::{builtin_label_pool, reference_corpus};
use tor_core::case_model::{
    build_options, check_record, default_distractor_count, generate_cases, load_cases, load_label_pool, parse_cases,
    save_cases, CaseRecord, LabelPool,
};
use tor_core::evaluation::{aggregate, load_human_scores, CaseScore};
use tor_core::evidence_tree::{diff_trees, merge_trees, parse_tree, render_tree, EvidenceTree};
use tor_core::orchestrator::{derive_case_seed, run_batch, write_outputs, BatchOutcome, OutputOptions, Resources, RunConfig};
use tor_core::retrieval::{corpus_to_jsonl, index_corpus, load_corpus, load_index, save_index, Bm25Params, RetrievalSet};
use tor_core::scenario::{build_scenario, ScenarioKind};
use tracing::info;

use crate::args::{BackendKind, EvalArgs, GenArgs, IndexArgs, RunArgs, ScenarioArg, TreeCommand};
use crate::config::{apply_ablations, apply_workflow, resolve, Resolved};

/// Exit status for a completed command: 0 clean, 1 when cases failed or
/// validation found problems. Configuration errors surface as `Err` (status 2).
pub type Status = i32;

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| anyhow!("{flag} is required (as a flag or in the config file)"))
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn load_resources(cfg: &Resolved) -> Result<Resources> {
    let templates = match &cfg.templates {
        Some(dir) => TemplateSet::with_overrides(dir)?,
        None => TemplateSet::builtin(),
    };
    let problems = templates.check();
    if let Some(first) = problems.first() {
        bail!("template check failed: {first}");
    }
    let mut retrieval = RetrievalSet::default();
    if cfg.run.rag {
        if let Some(path) = &cfg.index {
            retrieval.shared = Some(Arc::new(load_index(path)?));
        } else if let Some(path) = &cfg.corpus {
            retrieval.shared = Some(Arc::new(index_corpus(&load_corpus(path)?, Bm25Params::default())?));
        }
        for (role, path) in &cfg.role_corpus {
            if cfg.run.active_roles.contains(role) {
                let index = index_corpus(&load_corpus(path)?, Bm25Params::default())?;
                retrieval.per_role.insert(*role, Arc::new(index));
            }
        }
        if retrieval.shared.is_none() && retrieval.per_role.is_empty() {
            info!("no corpus given; agents run without retrieved references");
        }
    }
    Ok(Resources { templates, retrieval })
}

fn scripted_provider(cfg: &Resolved) -> Result<ScriptedProvider> {
    let path = required(&cfg.transcript, "--transcript")?;
    let transcript = Transcript::load(path)?;
    Ok(ScriptedProvider::new(transcript, cfg.match_mode()))
}

fn base_provider(cfg: &Resolved) -> Result<Arc<dyn BackendProvider>> {
    Ok(match cfg.backend {
        BackendKind::Scripted => Arc::new(scripted_provider(cfg)?),
        BackendKind::Remote => {
            if cfg.api_key.is_none() {
                tracing::warn!("{} is not set; requests are sent without credentials", tor_core::backend::API_KEY_ENV);
            }
            Arc::new(SharedProvider(Arc::new(RemoteBackend::new(cfg.remote_config())?)))
        }
    })
}

fn finish_batch(cfg: &Resolved, mut outcome: BatchOutcome) -> Result<Status> {
    if let Some(path) = &cfg.human_scores {
        let scores = load_human_scores(path)?;
        outcome.report = outcome.report.take().map(|r| r.with_human_scores(&scores));
    }
    let dir = required(&cfg.output, "--output")?;
    write_outputs(dir, &outcome, &OutputOptions { force: cfg.force, header: Some(cfg.header()) })?;
    for failure in &outcome.failures {
        eprintln!("case {} failed: {}", failure.case_id, failure.kind);
    }
    if let Some(report) = &outcome.report {
        print!("{}", report.to_table());
    }
    println!(
        "{} case(s) succeeded, {} failed; outputs in {}",
        outcome.results.len(),
        outcome.failures.len(),
        dir.display()
    );
    Ok(if outcome.all_succeeded() { 0 } else { 1 })
}

fn load_inputs(cfg: &Resolved) -> Result<(Vec<CaseRecord>, LabelPool)> {
    let cases = load_cases(required(&cfg.cases, "--cases")?)?;
    let pool = load_label_pool(required(&cfg.pool, "--pool")?)?;
    Ok((cases, pool))
}

pub fn run(m: &ArgMatches, args: &RunArgs) -> Result<Status> {
    let cfg = resolve(m, args)?;
    required(&cfg.output, "--output")?;
    let (cases, pool) = load_inputs(&cfg)?;
    let resources = load_resources(&cfg)?;
    let provider = base_provider(&cfg)?;
    let outcome = run_batch(&cases, &pool, &cfg.run, &resources, provider.as_ref(), cfg.jobs);
    finish_batch(&cfg, outcome)
}

pub fn record(m: &ArgMatches, args: &RunArgs, transcript_out: &Path) -> Result<Status> {
    let cfg = resolve(m, args)?;
    required(&cfg.output, "--output")?;
    refuse_overwrite(transcript_out, cfg.force)?;
    let (cases, pool) = load_inputs(&cfg)?;
    let resources = load_resources(&cfg)?;
    let recorder = RecordingProvider::new(base_provider(&cfg)?);
    let outcome = run_batch(&cases, &pool, &cfg.run, &resources, &recorder, cfg.jobs);
    let order: Vec<String> = cases.iter().map(|c| c.case_id.clone()).collect();
    let transcript = recorder.transcript(&order);
    transcript.save(transcript_out)?;
    println!("recorded {} exchange(s) to {}", transcript.entries.len(), transcript_out.display());
    finish_batch(&cfg, outcome)
}

/// Problems found by `validate`, one line each.
#[derive(Default)]
struct Findings(Vec<String>);

impl Findings {
    fn push(&mut self, scope: &str, problem: impl std::fmt::Display) {
        self.0.push(format!("{scope}: {problem}"));
    }
}

fn check_case_file(path: &Path, findings: &mut Findings) -> Option<Vec<CaseRecord>> {
    let scope = path.display().to_string();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            findings.push(&scope, e);
            return None;
        }
    };
    let value: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            findings.push(&scope, format!("not valid JSON: {e}"));
            return None;
        }
    };
    let Value::Array(items) = &value else {
        findings.push(&scope, "top-level value is not an array");
        return None;
    };
    let before = findings.0.len();
    let mut ids = BTreeSet::new();
    for (i, item) in items.iter().enumerate() {
        for e in check_record(i, item) {
            findings.push(&scope, e);
        }
        if let Some(id) = item.get("case_id").and_then(Value::as_str) {
            if !ids.insert(id.to_string()) {
                findings.push(&scope, format!("record {i}: duplicate case_id {id:?}"));
            }
        }
    }
    if findings.0.len() > before {
        return None;
    }
    match parse_cases(&text) {
        Ok(cases) => Some(cases),
        Err(e) => {
            findings.push(&scope, e);
            None
        }
    }
}

fn check_options(cases: &[CaseRecord], pool: &LabelPool, run: &RunConfig, findings: &mut Findings) {
    for case in cases {
        let scope = format!("case {}", case.case_id);
        if pool.department(&case.department).is_none() {
            findings.push(&scope, format!("department {:?} is not in the label pool", case.department));
            continue;
        }
        let count = run.distractor_count.unwrap_or_else(|| default_distractor_count(case));
        if let Err(e) = build_options(case, pool, count, derive_case_seed(run.seed, &case.case_id)) {
            findings.push(&scope, e);
        }
    }
}

pub fn validate(m: &ArgMatches, args: &RunArgs, dry_run: bool) -> Result<Status> {
    let cfg = resolve(m, args)?;
    let mut findings = Findings::default();

    let cases = cfg.cases.as_deref().and_then(|p| check_case_file(p, &mut findings));
    let pool = match &cfg.pool {
        Some(p) => load_label_pool(p).map_err(|e| findings.push(&p.display().to_string(), e)).ok(),
        None => None,
    };
    if let (Some(cases), Some(pool)) = (&cases, &pool) {
        check_options(cases, pool, &cfg.run, &mut findings);
    }
    for path in cfg.corpus.iter().chain(cfg.role_corpus.values()) {
        if let Err(e) = load_corpus(path) {
            findings.push(&path.display().to_string(), e);
        }
    }
    if let Some(path) = &cfg.index {
        if let Err(e) = load_index(path) {
            findings.push(&path.display().to_string(), e);
        }
    }
    let transcript = match &cfg.transcript {
        Some(p) => Transcript::load(p).map_err(|e| findings.push(&p.display().to_string(), e)).ok(),
        None => None,
    };
    let templates = match &cfg.templates {
        Some(dir) => TemplateSet::with_overrides(dir).map_err(|e| findings.push(&dir.display().to_string(), e)).ok(),
        None => Some(TemplateSet::builtin()),
    };
    if let Some(t) = &templates {
        for e in t.check() {
            findings.push("templates", e);
        }
    }

    if dry_run {
        match (&cases, &pool, transcript, templates, findings.0.is_empty()) {
            (Some(cases), Some(pool), Some(transcript), Some(templates), true) => {
                let mut resources = load_resources(&cfg)?;
                resources.templates = templates;
                let provider = ScriptedProvider::new(transcript, tor_core::backend::MatchMode::Strict);
                let outcome = run_batch(cases, pool, &cfg.run, &resources, &provider, cfg.jobs);
                // Calls the transcript could not answer are swallowed by the
                // participation and target steps; surface them here.
                for result in &outcome.results {
                    for event in result.trace.anomalies() {
                        let detail = event.detail.as_deref().unwrap_or("");
                        let scope = format!("dry run, case {}, {}", result.case_id, event.tag);
                        if detail.starts_with("backend failure") || detail.starts_with("template failure") {
                            findings.push(&scope, detail);
                        } else {
                            println!("note: {scope}: {detail}");
                        }
                    }
                }
                for failure in &outcome.failures {
                    findings.push(&format!("dry run, case {}", failure.case_id), &failure.kind);
                }
                for (pos, entry) in provider.unconsumed() {
                    let case = entry.case_id.as_deref().unwrap_or("*");
                    findings.push("dry run", format!("transcript entry {} ({}, case {case}) never consumed", pos + 1, entry.tag));
                }
                println!("dry run: {} case(s) completed", outcome.results.len());
            }
            (_, _, None, _, _) if cfg.transcript.is_none() => findings.push("dry run", "--transcript is required"),
            _ => findings.push("dry run", "skipped because the inputs have problems"),
        }
    }

    if findings.0.is_empty() {
        println!("ok: no problems found");
        Ok(0)
    } else {
        for line in &findings.0 {
            println!("{line}");
        }
        println!("{} problem(s) found", findings.0.len());
        Ok(1)
    }
}

fn write_file(path: &Path, contents: &str, force: bool) -> Result<()> {
    refuse_overwrite(path, force)?;
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn scenario_kind(arg: ScenarioArg) -> ScenarioKind {
    match arg {
        ScenarioArg::AllParticipate => ScenarioKind::AllParticipate,
        ScenarioArg::NoneParticipate => ScenarioKind::NoneParticipate,
        ScenarioArg::Mixed => ScenarioKind::Mixed,
        ScenarioArg::RepairNeeded => ScenarioKind::RepairNeeded,
        ScenarioArg::CrossVerifyOff => ScenarioKind::CrossVerifyOff,
        ScenarioArg::PerfectOracle => ScenarioKind::PerfectOracle,
    }
}

pub fn gen_cases(m: &ArgMatches, args: &GenArgs) -> Result<Status> {
    let cases = generate_cases(args.count, args.workflow.seed);
    refuse_overwrite(&args.output, args.force)?;
    save_cases(&args.output, &cases)?;
    let pool = builtin_label_pool();
    if let Some(path) = &args.pool_out {
        let mut text = serde_json::to_string_pretty(&pool)?;
        text.push('\n');
        write_file(path, &text, args.force)?;
    }
    if let Some(path) = &args.corpus_out {
        write_file(path, &corpus_to_jsonl(&reference_corpus()), args.force)?;
    }
    if let (Some(kind), Some(path)) = (args.scenario, &args.transcript_out) {
        let mut config = RunConfig::default();
        apply_workflow(m, &args.workflow, &mut config);
        apply_ablations(&mut config, &args.workflow.ablate);
        config.validate().map_err(|e| anyhow!("invalid run configuration: {e}"))?;
        let scenario = build_scenario(scenario_kind(kind), &cases, &pool, &config)?;
        refuse_overwrite(path, args.force)?;
        scenario.transcript.save(path)?;
        println!("wrote {} transcript entries ({}) to {}", scenario.transcript.entries.len(), scenario.kind, path.display());
        // Option letters depend on the run seed, so the replay must use the same one.
        println!("replay with the same workflow flags, including --seed {}", config.seed);
    }
    println!("wrote {} case(s) to {}", cases.len(), args.output.display());
    Ok(0)
}

pub fn index(args: &IndexArgs) -> Result<Status> {
    if !(args.k1.is_finite() && args.k1 >= 0.0) {
        bail!("--k1 must be finite and non-negative");
    }
    if !(0.0..=1.0).contains(&args.b) {
        bail!("--b must lie in [0, 1]");
    }
    refuse_overwrite(&args.output, args.force)?;
    let docs = load_corpus(&args.corpus)?;
    let index = index_corpus(&docs, Bm25Params { k1: args.k1, b: args.b })?;
    save_index(&args.output, &index)?;
    println!("indexed {} document(s) into {}", index.len(), args.output.display());
    Ok(0)
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

/// Tree files may hold either text (any accepted layout) or the JSON form.
fn load_tree(path: &Path) -> Result<EvidenceTree> {
    let text = read_input(path)?;
    if text.trim_start().starts_with('{') {
        let tree: EvidenceTree = serde_json::from_str(&text).with_context(|| format!("{}: bad tree JSON", path.display()))?;
        render_tree(&tree).with_context(|| format!("{}", path.display()))?;
        Ok(tree)
    } else {
        parse_tree(&text).with_context(|| format!("{}", path.display()))
    }
}

pub fn tree(cmd: &TreeCommand) -> Result<Status> {
    match cmd {
        TreeCommand::Parse { input, json } => {
            let tree = parse_tree(&read_input(input)?)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&tree.to_json())?);
            } else {
                print!("{}", ensure_newline(render_tree(&tree)?));
            }
        }
        TreeCommand::Render { input } => {
            let tree: EvidenceTree = serde_json::from_str(&read_input(input)?).context("bad tree JSON")?;
            print!("{}", ensure_newline(render_tree(&tree)?));
        }
        TreeCommand::Diff { left, right } => {
            let conflicts = diff_trees(&load_tree(left)?, &load_tree(right)?);
            let mut v = serde_json::to_value(&conflicts)?;
            v["has_conflict"] = Value::Bool(conflicts.has_conflict());
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        TreeCommand::Merge { inputs, title } => {
            let trees = inputs.iter().map(|p| load_tree(p)).collect::<Result<Vec<_>>>()?;
            print!("{}", ensure_newline(render_tree(&merge_trees(&trees, title)?)?));
        }
    }
    Ok(0)
}

fn ensure_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn read_result(path: &Path) -> Result<(String, CaseScore)> {
    let value: Value = serde_json::from_str(&fs::read_to_string(path)?)
        .with_context(|| format!("{}: not JSON", path.display()))?;
    let id = value["case_id"].as_str().ok_or_else(|| anyhow!("{}: missing case_id", path.display()))?;
    let score: CaseScore = serde_json::from_value(value["metrics"].clone())
        .with_context(|| format!("{}: metrics need tp, fp and fn", path.display()))?;
    Ok((id.to_string(), score))
}

pub fn eval(args: &EvalArgs) -> Result<Status> {
    let dir = if args.results.join("results").is_dir() { args.results.join("results") } else { args.results.clone() };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let scores = files.iter().map(|p| read_result(p)).collect::<Result<Vec<_>>>()?;
    let mut seen = BTreeMap::new();
    for (id, _) in &scores {
        if seen.insert(id.clone(), ()).is_some() {
            bail!("case {id:?} appears in more than one result file");
        }
    }
    let mut report = aggregate(&scores)?;
    if let Some(path) = &args.import_human {
        report = report.with_human_scores(&load_human_scores(path)?);
    }
    print!("{}", report.to_table());
    if let Some(path) = &args.output {
        write_file(path, &report.to_json(), args.force)?;
    }
    Ok(0)
}

//! Resolves run settings with precedence defaults < TOML file < flags < environment.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::{Deserialize, Serialize};
use tor_core::agents::TEMPLATE_VERSION;
use tor_core::backend::{MatchMode, RemoteConfig};
use tor_core::orchestrator::RunConfig;
use tor_core::AgentRole;

use crate::args::{Ablation, BackendKind, MatchArg, RunArgs, WorkflowArgs};

pub const BASE_URL_ENV: &str = "TOR_BASE_URL";

/// Shape of the `--config` TOML file. Everything is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub cases: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub role_corpus: BTreeMap<AgentRole, PathBuf>,
    pub templates: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub transcript: Option<PathBuf>,
    #[serde(rename = "match")]
    pub match_mode: Option<MatchArg>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub human_scores: Option<PathBuf>,
    #[serde(default)]
    pub ablate: Vec<Ablation>,
    /// Workflow settings; unknown keys are rejected.
    pub run: Option<RunConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Relative paths in the file are taken relative to the file itself.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        for p in [
            &mut self.cases,
            &mut self.pool,
            &mut self.corpus,
            &mut self.index,
            &mut self.templates,
            &mut self.transcript,
            &mut self.output,
            &mut self.human_scores,
        ] {
            fix(p);
        }
        for path in self.role_corpus.values_mut() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

/// Fully resolved settings for `run`, `record` and `validate`.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub cases: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub role_corpus: BTreeMap<AgentRole, PathBuf>,
    pub templates: Option<PathBuf>,
    pub templates_version: &'static str,
    pub backend: BackendKind,
    pub transcript: Option<PathBuf>,
    #[serde(rename = "match")]
    pub match_mode: MatchArg,
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub force: bool,
    pub jobs: usize,
    pub human_scores: Option<PathBuf>,
    pub ablations: Vec<Ablation>,
    pub run: RunConfig,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Resolved {
    pub fn match_mode(&self) -> MatchMode {
        match self.match_mode {
            MatchArg::Strict => MatchMode::Strict,
            MatchArg::Lenient => MatchMode::Lenient,
        }
    }

    pub fn remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key: self.api_key.clone(),
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
            seed: self.run.seed,
            ..RemoteConfig::default()
        }
    }

    /// The resolved settings as written to `config.json` and trace headers.
    /// The API key is never included.
    pub fn header(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine) | Some(ValueSource::EnvVariable))
}

/// Picks the flag when given explicitly, else the file value, else the flag default.
fn pick<T>(m: &ArgMatches, id: &str, flag: T, file: Option<T>) -> T {
    if explicit(m, id) {
        flag
    } else {
        file.unwrap_or(flag)
    }
}

fn pick_opt<T>(m: &ArgMatches, id: &str, flag: Option<T>, file: Option<T>) -> Option<T> {
    if explicit(m, id) {
        flag
    } else {
        file.or(flag)
    }
}

pub fn parse_role_corpus(specs: &[String]) -> Result<BTreeMap<AgentRole, PathBuf>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let Some((role, path)) = spec.split_once('=') else {
            bail!("--role-corpus expects ROLE=FILE, got {spec:?}");
        };
        let role: AgentRole = role.parse()?;
        if !role.is_specialist() {
            bail!("--role-corpus: {role} does not retrieve");
        }
        if out.insert(role, PathBuf::from(path)).is_some() {
            bail!("--role-corpus given twice for {role}");
        }
    }
    Ok(out)
}

pub fn apply_ablations(run: &mut RunConfig, ablations: &[Ablation]) {
    for a in ablations {
        match a {
            Ablation::NoCrossVerify => run.cross_verification = false,
            Ablation::NoTree => run.evidence_tree = false,
            Ablation::NoRag => run.rag = false,
            Ablation::Exclude(role) => {
                run.active_roles.remove(role);
            }
        }
    }
}

/// Applies explicitly given workflow flags on top of `run`.
pub fn apply_workflow(m: &ArgMatches, w: &WorkflowArgs, run: &mut RunConfig) {
    if explicit(m, "seed") {
        run.seed = w.seed;
    }
    if explicit(m, "k") {
        run.k = w.k;
    }
    if explicit(m, "t") {
        run.t = w.t;
    }
    if explicit(m, "distractors") {
        run.distractor_count = w.distractors;
    }
    if explicit(m, "targets") {
        run.target_selection = w.targets.into();
    }
    if explicit(m, "early_exit") {
        run.early_exit = w.early_exit;
    }
    if explicit(m, "repair_budget") {
        run.repair_budget = w.repair_budget;
    }
}

/// `m` is the subcommand's own matches.
pub fn resolve(m: &ArgMatches, args: &RunArgs) -> Result<Resolved> {
    let mut file = match &args.config {
        Some(path) => {
            let mut f = FileConfig::load(path)?;
            f.rebase(path.parent().unwrap_or(Path::new(".")));
            f
        }
        None => FileConfig::default(),
    };

    let mut run = file.run.take().unwrap_or_default();
    apply_workflow(m, &args.workflow, &mut run);
    if explicit(m, "temperature") {
        run.temperature = args.temperature;
    }
    if explicit(m, "max_tokens") {
        run.max_tokens = args.max_tokens;
    }
    if explicit(m, "retrieval_k") {
        run.retrieval_k = args.retrieval_k;
    }

    let mut ablations = file.ablate.clone();
    for a in &args.workflow.ablate {
        if !ablations.contains(a) {
            ablations.push(*a);
        }
    }
    apply_ablations(&mut run, &ablations);
    run.validate().map_err(|e| anyhow::anyhow!("invalid run configuration: {e}"))?;

    let mut role_corpus = file.role_corpus.clone();
    role_corpus.extend(parse_role_corpus(&args.role_corpus)?);

    let mut base_url = pick(m, "base_url", args.base_url.clone(), file.base_url.take());
    if let Ok(url) = std::env::var(BASE_URL_ENV) {
        if !url.trim().is_empty() {
            base_url = url;
        }
    }
    let api_key = std::env::var(tor_core::backend::API_KEY_ENV).ok().filter(|k| !k.is_empty());

    let jobs = pick(m, "jobs", args.jobs, file.jobs);
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let inactive: BTreeSet<AgentRole> =
        role_corpus.keys().copied().filter(|r| !run.active_roles.contains(r)).collect();
    for role in inactive {
        tracing::warn!(%role, "per-role corpus given for an inactive role; ignored");
    }

    Ok(Resolved {
        cases: pick_opt(m, "cases", args.cases.clone(), file.cases),
        pool: pick_opt(m, "pool", args.pool.clone(), file.pool),
        corpus: pick_opt(m, "corpus", args.corpus.clone(), file.corpus),
        index: pick_opt(m, "index", args.index.clone(), file.index),
        role_corpus,
        templates: pick_opt(m, "templates", args.templates.clone(), file.templates),
        templates_version: TEMPLATE_VERSION,
        backend: pick(m, "backend", args.backend, file.backend),
        transcript: pick_opt(m, "transcript", args.transcript.clone(), file.transcript),
        match_mode: pick(m, "match_mode", args.match_mode, file.match_mode),
        base_url,
        model: pick(m, "model", args.model.clone(), file.model),
        timeout_secs: pick(m, "timeout_secs", args.timeout_secs, file.timeout_secs),
        max_retries: pick(m, "max_retries", args.max_retries, file.max_retries),
        output: pick_opt(m, "output", args.output.clone(), file.output),
        force: args.force,
        jobs,
        human_scores: pick_opt(m, "human_scores", args.human_scores.clone(), file.human_scores),
        ablations,
        run,
        api_key,
    })
}

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tor_core::agents::TargetSelection;
use tor_core::AgentRole;

pub const DEFAULT_BASE_URL: &str = "https://api.deepseek.com/v1";
pub const DEFAULT_MODEL: &str = "deepseek-chat";

#[derive(Debug, Parser)]
#[command(name = "tor", version, about = "Multi-agent evidence-tree diagnosis runner")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the diagnosis workflow over a case file and write results.
    Run(RunArgs),
    /// Run a batch and save every model exchange as a replayable transcript.
    Record {
        #[command(flatten)]
        run: RunArgs,
        /// Where to write the recorded transcript (JSONL).
        #[arg(long, value_name = "FILE")]
        transcript_out: PathBuf,
    },
    /// Schema-check inputs and list every violation.
    Validate {
        #[command(flatten)]
        run: RunArgs,
        /// Replay the transcript in strict mode and report entries the run never consumes.
        #[arg(long)]
        dry_run: bool,
    },
    /// Generate synthetic cases, plus optional pool, corpus and scripted transcript.
    GenCases(GenArgs),
    /// Build a BM25 index file from a JSONL corpus.
    Index(IndexArgs),
    /// Parse, render, compare and merge evidence trees.
    #[command(subcommand)]
    Tree(TreeCommand),
    /// Recompute the evaluation report from result files.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchArg {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetsArg {
    Inline,
    Prompted,
}

impl From<TargetsArg> for TargetSelection {
    fn from(t: TargetsArg) -> Self {
        match t {
            TargetsArg::Inline => TargetSelection::Inline,
            TargetsArg::Prompted => TargetSelection::Prompted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ablation {
    NoCrossVerify,
    NoTree,
    NoRag,
    Exclude(AgentRole),
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-crossverify" => Ok(Ablation::NoCrossVerify),
            "no-tree" => Ok(Ablation::NoTree),
            "no-rag" => Ok(Ablation::NoRag),
            other => {
                let role = other
                    .strip_prefix("exclude-")
                    .ok_or_else(|| format!("unknown ablation {other:?}"))?
                    .parse::<AgentRole>()
                    .map_err(|e| e.to_string())?;
                if !role.is_specialist() || role == AgentRole::Outpatient {
                    return Err(format!("{role} cannot be excluded"));
                }
                Ok(Ablation::Exclude(role))
            }
        }
    }
}

impl TryFrom<String> for Ablation {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        match a {
            Ablation::NoCrossVerify => "no-crossverify".into(),
            Ablation::NoTree => "no-tree".into(),
            Ablation::NoRag => "no-rag".into(),
            Ablation::Exclude(role) => format!("exclude-{}", role.slug()),
        }
    }
}

/// Settings that shape the workflow itself (shared by `run` and `gen-cases`).
#[derive(Debug, Clone, Args)]
pub struct WorkflowArgs {
    /// Run seed; each case shuffles options with seed XOR hash(case_id). gen-cases also draws cases from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Discussion rounds.
    #[arg(short = 'k', long, default_value_t = 2)]
    pub k: u32,
    /// Turns per round.
    #[arg(short = 't', long, default_value_t = 2)]
    pub t: u32,
    /// Distractor options per case [default: max(3, number of gold labels)].
    #[arg(long, value_name = "N")]
    pub distractors: Option<usize>,
    /// How discussion targets are chosen.
    #[arg(long, value_enum, default_value_t = TargetsArg::Inline)]
    pub targets: TargetsArg,
    /// Skip the remaining rounds after a round without opinions.
    #[arg(long)]
    pub early_exit: bool,
    /// Repair re-prompts per call after a malformed reply.
    #[arg(long, default_value_t = 2)]
    pub repair_budget: u32,
    /// Ablation: no-crossverify, no-tree, no-rag, exclude-laboratory, exclude-radiology, exclude-pathology.
    #[arg(long = "ablate", value_name = "ABLATION")]
    pub ablate: Vec<Ablation>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML config file (lower precedence than flags).
    #[arg(long, env = "TOR_CONFIG", hide_env_values = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Case file (JSON array).
    #[arg(long, value_name = "FILE")]
    pub cases: Option<PathBuf>,
    /// Label pool (JSON object: department -> labels).
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Shared reference corpus (JSONL); indexed on load.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Prebuilt index file; takes precedence over --corpus.
    #[arg(long, value_name = "FILE")]
    pub index: Option<PathBuf>,
    /// Per-role corpus override, e.g. radiology=imaging.jsonl.
    #[arg(long = "role-corpus", value_name = "ROLE=FILE")]
    pub role_corpus: Vec<String>,
    /// Prompt template override directory.
    #[arg(long, value_name = "DIR")]
    pub templates: Option<PathBuf>,
    /// Model backend.
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    pub backend: BackendKind,
    /// Transcript replayed by the scripted backend (JSONL).
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
    /// Transcript matching mode.
    #[arg(long = "match", value_enum, default_value_t = MatchArg::Strict)]
    pub match_mode: MatchArg,
    /// Remote API base URL (TOR_BASE_URL overrides).
    #[arg(long, default_value = DEFAULT_BASE_URL)]
    pub base_url: String,
    /// Remote model name.
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Remote retries after the first attempt.
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Sampling temperature.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Completion token limit per request.
    #[arg(long, default_value_t = 2048)]
    pub max_tokens: u32,
    /// Documents retrieved per specialist.
    #[arg(long, default_value_t = 3)]
    pub retrieval_k: usize,
    #[command(flatten)]
    pub workflow: WorkflowArgs,
    /// Output directory.
    #[arg(short = 'o', long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Cases run in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Human relevance/completeness scores (CSV) to attach to the report.
    #[arg(long, value_name = "FILE")]
    pub human_scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    AllParticipate,
    NoneParticipate,
    Mixed,
    RepairNeeded,
    CrossVerifyOff,
    PerfectOracle,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of cases.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Case file to write.
    #[arg(short = 'o', long, value_name = "FILE")]
    pub output: PathBuf,
    /// Also write the matching label pool.
    #[arg(long, value_name = "FILE")]
    pub pool_out: Option<PathBuf>,
    /// Also write the built-in reference corpus (JSONL).
    #[arg(long, value_name = "FILE")]
    pub corpus_out: Option<PathBuf>,
    /// Scripted workflow to emit as a transcript.
    #[arg(long, value_enum, requires = "transcript_out")]
    pub scenario: Option<ScenarioArg>,
    /// Transcript file for --scenario.
    #[arg(long, value_name = "FILE", requires = "scenario")]
    pub transcript_out: Option<PathBuf>,
    #[command(flatten)]
    pub workflow: WorkflowArgs,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Corpus to index (JSONL).
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Index file to write.
    #[arg(short = 'o', long, value_name = "FILE")]
    pub output: PathBuf,
    /// BM25 term-frequency saturation.
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    /// BM25 length normalization.
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    /// Overwrite an existing index file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum TreeCommand {
    /// Parse tree text (file or - for stdin) and print it canonically.
    Parse {
        #[arg(default_value = "-")]
        input: PathBuf,
        /// Print JSON instead of canonical text.
        #[arg(long)]
        json: bool,
    },
    /// Render a JSON tree as canonical text.
    Render {
        #[arg(default_value = "-")]
        input: PathBuf,
    },
    /// Compare the diagnosis labels of two trees.
    Diff { left: PathBuf, right: PathBuf },
    /// Merge trees by normalized diagnosis label.
    Merge {
        #[arg(required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Title of the merged tree.
        #[arg(long, default_value = "Merged Reasoning Pathway")]
        title: String,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run output directory (or a directory of result JSON files).
    #[arg(long, value_name = "DIR")]
    pub results: PathBuf,
    /// Human scores CSV with columns case_id,relevance,completeness.
    #[arg(long, value_name = "FILE")]
    pub import_human: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(short = 'o', long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Overwrite an existing report file.
    #[arg(long)]
    pub force: bool,
}

//! `reversal`: simulate, run LLM agents, measure, fit and compare.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;

#[derive(Parser, Debug)]
#[command(name = "reversal", version, about = "Reversal-learning evaluation stack")]
struct Cli {
    /// Worker threads for run- and chain-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML file with per-subcommand defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate synthetic agents through the task.
    Simulate(SimulateArgs),
    /// Run a chat-completion model (or the offline mock) through the task.
    RunLlm(RunLlmArgs),
    /// Per-run behavioural metrics and their cell summary.
    Metrics(MetricsArgs),
    /// Hierarchical Bayesian fit of one model.
    Fit(FitArgs),
    /// Fit several models and compare them by DIC.
    Compare(CompareArgs),
    /// Parameter-recovery study.
    Recover(RecoverArgs),
    /// Reversal-aligned choice curves as CSV.
    ExportCurves(CurvesArgs),
    /// Serve live sessions for human participants.
    Serve(ServeArgs),
    /// Convert an external human-data CSV to run records.
    ImportHuman(ImportArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Learning rule: dual | kdu.
    #[arg(long)]
    pub rule: Option<String>,
    /// Scripted baseline instead of an RL agent: oracle | random | always-wrong | wsls.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub eta_pos: Option<f64>,
    #[arg(long)]
    pub eta_neg: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Run-level spread of the parameters on the transformed scale.
    #[arg(long)]
    pub sd: Option<f64>,
    /// Win-stay probability for `--policy wsls`.
    #[arg(long)]
    pub p_stay_win: Option<f64>,
    /// Lose-shift probability for `--policy wsls`.
    #[arg(long)]
    pub p_shift_loss: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// fixed | random.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLlmArgs {
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Requests per second across all runs.
    #[arg(long)]
    pub rate_limit: Option<f64>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// ev | ve | xy | wl, or any two uppercase letters.
    #[arg(long)]
    pub variant: Option<String>,
    /// Offline mock instead of a network model: wsls | always-<label>.
    #[arg(long)]
    pub mock: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSONL file for per-trial attempt logs.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// JSON file for the experiment summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Per-run metrics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cell summary CSV (mean, SD, n per metric).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// dual | kdu.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Posterior predictive replicates (0 to skip).
    #[arg(long)]
    pub ppc: Option<usize>,
    /// Summary JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Long-format draws CSV.
    #[arg(long)]
    pub draws: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Comma-separated models, e.g. dual,kdu.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report DIC even when a fit misses the R-hat gate.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_nonconverged: bool,
    /// DIC report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverArgs {
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub eta_pos: Option<f64>,
    #[arg(long)]
    pub eta_neg: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub sd: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recovery report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Trials before and after each reversal.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeArgs {
    /// Bind address, e.g. 127.0.0.1:8080.
    #[arg(long)]
    pub addr: Option<String>,
    /// JSONL file receiving finished sessions.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Permissive CORS for local UI development.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub cors: bool,
    /// Default session length.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub schedule: Option<String>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Choice label mapped to the first option.
    #[arg(long)]
    pub label_a0: Option<String>,
    /// Choice label mapped to the second option.
    #[arg(long)]
    pub label_a1: Option<String>,
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    use reversal_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::InvalidConfig(_)) | Some(E::InvalidParams(_)) => "invalid_input",
        Some(E::NotConverged { .. }) => "not_converged",
        Some(E::Parse { .. }) | Some(E::SchemaVersion { .. }) | Some(E::Csv(_)) | Some(E::Json(_)) => "parse",
        Some(E::Io(_)) => "io",
        Some(E::Inference(_)) => "inference",
        Some(_) => "task",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "error",
    }
}

/// `{"error":{"kind":...,"message":...}}` on one line.
fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message.trim() } });
    eprintln!("{line}");
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let exec = commands::setup_jobs(cli.jobs.or(file.jobs()))?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(file.resolve("simulate", &a)?, exec),
        Command::RunLlm(a) => commands::run_llm(file.resolve("run-llm", &a)?, exec),
        Command::Metrics(a) => commands::metrics(file.resolve("metrics", &a)?, exec),
        Command::Fit(a) => commands::fit(file.resolve("fit", &a)?, exec),
        Command::Compare(a) => commands::compare(file.resolve("compare", &a)?, exec),
        Command::Recover(a) => commands::recover(file.resolve("recover", &a)?, exec),
        Command::ExportCurves(a) => commands::export_curves(file.resolve("export-curves", &a)?),
        Command::Serve(a) => commands::serve(file.resolve("serve", &a)?),
        Command::ImportHuman(a) => commands::import_human(file.resolve("import-human", &a)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            report("usage", first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            report(error_kind(&e), &message);
            ExitCode::FAILURE
        }
    }
}

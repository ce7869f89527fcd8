//! Trial-level retry policy and whole experiments.

use std::time::Instant;

use reversal_core::storage::{AgentDescriptor, RunRecord, RunStatus, TrialRecord};
use reversal_core::{seed, Action, EnvConfig, EnvState, Exec, Result};
use serde::{Deserialize, Serialize};

use crate::endpoint::{ChatEndpoint, ChatMessage, LlmEndpointConfig};
use crate::prompt::{corrective_message, parse_response, render_prompt, PromptVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Valid,
    /// The reply was not exactly one label.
    InvalidFormat,
    /// No reply (network, HTTP status, malformed body).
    Transport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub outcome: AttemptOutcome,
    pub raw: Option<String>,
    pub error: Option<String>,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmTrialLog {
    pub trial: usize,
    pub attempts: Vec<AttemptLog>,
    pub valid: bool,
}

impl LlmTrialLog {
    pub fn count(&self, outcome: AttemptOutcome) -> usize {
        self.attempts.iter().filter(|a| a.outcome == outcome).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrialOutcome {
    Valid { action: Action, log: LlmTrialLog },
    NonCompliant { log: LlmTrialLog },
}

impl TrialOutcome {
    pub fn log(&self) -> &LlmTrialLog {
        match self {
            TrialOutcome::Valid { log, .. } | TrialOutcome::NonCompliant { log } => log,
        }
    }
}

/// Sends `messages` and retries up to `max_retries` times. After an invalid
/// reply the reply and a corrective instruction are appended to the
/// transcript; after a transport failure the same transcript is resent. Both
/// kinds of failure use the same budget.
pub fn run_llm_trial(
    endpoint: &dyn ChatEndpoint,
    messages: Vec<ChatMessage>,
    variant: &PromptVariant,
    max_retries: u32,
    trial: usize,
) -> TrialOutcome {
    let mut transcript = messages;
    let mut log = LlmTrialLog {
        trial,
        attempts: Vec::new(),
        valid: false,
    };
    for _ in 0..=max_retries {
        let start = Instant::now();
        let reply = endpoint.complete(&transcript);
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        match reply {
            Ok(raw) => match parse_response(&raw, variant) {
                Ok(action) => {
                    log.attempts.push(AttemptLog {
                        outcome: AttemptOutcome::Valid,
                        raw: Some(raw),
                        error: None,
                        latency_ms,
                    });
                    log.valid = true;
                    return TrialOutcome::Valid { action, log };
                }
                Err(_) => {
                    transcript.push(ChatMessage::assistant(raw.clone()));
                    transcript.push(corrective_message(variant));
                    log.attempts.push(AttemptLog {
                        outcome: AttemptOutcome::InvalidFormat,
                        raw: Some(raw),
                        error: None,
                        latency_ms,
                    });
                }
            },
            Err(e) => log.attempts.push(AttemptLog {
                outcome: AttemptOutcome::Transport,
                raw: None,
                error: Some(e.message),
                latency_ms,
            }),
        }
    }
    TrialOutcome::NonCompliant { log }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n_runs: usize,
    pub n_complete: usize,
    pub n_incomplete: usize,
    /// Runs that errored outside the retry policy.
    pub n_failed: usize,
    pub total_attempts: usize,
    pub invalid_attempts: usize,
    pub transport_failures: usize,
    /// `invalid_attempts / total_attempts`.
    pub invalid_rate: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    /// Per-run trial logs, aligned with `runs`.
    pub logs: Vec<Vec<LlmTrialLog>>,
    /// `(run index, message)` for runs that failed outright.
    pub failures: Vec<(usize, String)>,
    pub summary: ExperimentSummary,
}

fn run_one(
    endpoint: &dyn ChatEndpoint,
    ecfg: &LlmEndpointConfig,
    env: &EnvConfig,
    variant: &PromptVariant,
    i: usize,
) -> Result<(RunRecord, Vec<LlmTrialLog>)> {
    let env_cfg = env.clone().with_seed(seed::derive(env.seed, i as u64, seed::stream::ENV));
    let mut state = EnvState::new(env_cfg.clone())?;
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(env.n_trials);
    let mut logs = Vec::with_capacity(env.n_trials);
    let mut status = RunStatus::Complete;
    let mut invalid = 0u32;
    while !state.is_finished() {
        let t = trials.len() + 1;
        let messages = render_prompt(&trials, t, variant, &env_cfg);
        let outcome = run_llm_trial(endpoint, messages, variant, ecfg.max_retries, t);
        invalid += outcome.log().count(AttemptOutcome::InvalidFormat) as u32;
        match outcome {
            TrialOutcome::Valid { action, log } => {
                let step = state.step(action)?;
                let mut rec = TrialRecord::from_step(&step);
                rec.label_shown = Some(variant.label(action));
                rec.retries = log.attempts.len() as u32 - 1;
                trials.push(rec);
                logs.push(log);
            }
            TrialOutcome::NonCompliant { log } => {
                logs.push(log);
                status = RunStatus::Incomplete;
                break;
            }
        }
    }
    let run = RunRecord {
        run_id: format!("llm-{i:04}"),
        agent: AgentDescriptor::Llm {
            provider: ecfg.provider.clone(),
            model: ecfg.model.clone(),
            variant: variant.to_string(),
            temperature: ecfg.temperature,
            top_p: ecfg.top_p,
        },
        schedule: env.schedule.into(),
        seed: env_cfg.seed,
        n_trials: env.n_trials,
        status,
        trials,
        invalid_attempt_count: invalid,
    };
    Ok((run, logs))
}

/// Runs `n_runs` independent environments (seeded from `env.seed` and the
/// run index) through `endpoint`. Runs may proceed concurrently under
/// `Exec::Parallel`; trials within a run are sequential.
pub fn run_llm_experiment(
    endpoint: &dyn ChatEndpoint,
    ecfg: &LlmEndpointConfig,
    env: &EnvConfig,
    variant: &PromptVariant,
    n_runs: usize,
    exec: Exec,
) -> Result<ExperimentResult> {
    ecfg.validate()?;
    variant.validate()?;
    env.validate()?;
    let results = exec.map_indexed(n_runs, |i| run_one(endpoint, ecfg, env, variant, i));

    let mut out = ExperimentResult {
        runs: Vec::new(),
        logs: Vec::new(),
        failures: Vec::new(),
        summary: ExperimentSummary {
            n_runs,
            ..Default::default()
        },
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((run, logs)) => {
                let s = &mut out.summary;
                match run.status {
                    RunStatus::Complete => s.n_complete += 1,
                    RunStatus::Incomplete => s.n_incomplete += 1,
                }
                for l in &logs {
                    s.total_attempts += l.attempts.len();
                    s.invalid_attempts += l.count(AttemptOutcome::InvalidFormat);
                    s.transport_failures += l.count(AttemptOutcome::Transport);
                }
                out.runs.push(run);
                out.logs.push(logs);
            }
            Err(e) => {
                out.summary.n_failed += 1;
                out.failures.push((i, e.to_string()));
            }
        }
    }
    let s = &mut out.summary;
    s.invalid_rate = if s.total_attempts > 0 {
        s.invalid_attempts as f64 / s.total_attempts as f64
    } else {
        0.0
    };
    Ok(out)
}

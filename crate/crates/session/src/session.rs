use reversal_core::storage::{AgentDescriptor, RunRecord, RunStatus, TrialRecord};
use reversal_core::{Action, EnvConfig, EnvState, Error, Result, ScheduleKind};
use serde::{Deserialize, Serialize};

/// Optional overrides for a new session.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateRequest {
    pub n_trials: Option<usize>,
    /// `fixed` or `random`.
    pub schedule: Option<String>,
    /// Two distinct uppercase letters bound to the two options, e.g. `"EV"`.
    pub labels: Option<String>,
    pub participant: Option<String>,
    pub condition: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRequest {
    pub label: String,
    /// 1-based trial the client is answering; a mismatch is a conflict.
    #[serde(default)]
    pub trial: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub trial: usize,
    pub label: char,
    pub coins: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub labels: [char; 2],
    pub n_trials: usize,
    pub reward_magnitude: i32,
    /// Completed trials.
    pub trial: usize,
    pub total: i64,
    pub done: bool,
    pub history: Vec<HistoryItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub trial: usize,
    pub label: char,
    pub coins: i32,
    pub win: bool,
    pub total: i64,
    pub done: bool,
}

pub(crate) enum SubmitError {
    InvalidLabel(String),
    Conflict(String),
    Internal(Error),
}

pub(crate) struct Session {
    pub id: String,
    labels: [char; 2],
    env: EnvState,
    trials: Vec<TrialRecord>,
    participant: Option<String>,
    condition: Option<String>,
}

fn parse_labels(s: &str) -> Result<[char; 2]> {
    let chars: Vec<char> = s.chars().collect();
    match chars.as_slice() {
        [a, b] if a.is_ascii_uppercase() && b.is_ascii_uppercase() && a != b => Ok([*a, *b]),
        _ => Err(Error::InvalidConfig(format!("labels must be two distinct uppercase letters (got {s:?})"))),
    }
}

impl Session {
    pub fn new(id: String, req: CreateRequest, defaults: &EnvConfig, max_trials: usize, seed: u64) -> Result<Self> {
        let mut cfg = defaults.clone().with_seed(seed);
        if let Some(n) = req.n_trials {
            if n > max_trials {
                return Err(Error::InvalidConfig(format!("n_trials must be at most {max_trials}")));
            }
            cfg.n_trials = n;
        }
        if let Some(s) = &req.schedule {
            cfg.schedule = s.parse::<ScheduleKind>()?;
        }
        let labels = parse_labels(req.labels.as_deref().unwrap_or("EV"))?;
        let env = EnvState::new(cfg)?;
        Ok(Session {
            id,
            labels,
            env,
            trials: Vec::new(),
            participant: req.participant,
            condition: req.condition,
        })
    }

    fn total(&self) -> i64 {
        self.trials.iter().map(|t| t.coins as i64).sum()
    }

    pub fn is_done(&self) -> bool {
        self.env.is_finished()
    }

    pub fn view(&self) -> SessionView {
        let cfg = self.env.config();
        SessionView {
            session_id: self.id.clone(),
            labels: self.labels,
            n_trials: cfg.n_trials,
            reward_magnitude: cfg.reward_magnitude,
            trial: self.trials.len(),
            total: self.total(),
            done: self.is_done(),
            history: self
                .trials
                .iter()
                .map(|t| HistoryItem {
                    trial: t.t,
                    label: t.label_shown.unwrap_or(self.labels[t.action.index()]),
                    coins: t.coins,
                })
                .collect(),
        }
    }

    pub fn submit(&mut self, req: &ChoiceRequest, now_ms: u64) -> std::result::Result<Feedback, SubmitError> {
        let mut chars = req.label.chars();
        let label = match (chars.next(), chars.next()) {
            (Some(c), None) if self.labels.contains(&c) => c,
            _ => {
                return Err(SubmitError::InvalidLabel(format!(
                    "label must be {} or {} (got {:?})",
                    self.labels[0], self.labels[1], req.label
                )))
            }
        };
        if self.is_done() {
            return Err(SubmitError::Conflict("session is finished".into()));
        }
        let next = self.trials.len() + 1;
        if let Some(t) = req.trial {
            if t != next {
                return Err(SubmitError::Conflict(format!("trial {t} is not open; next trial is {next}")));
            }
        }
        let action = if label == self.labels[0] { Action::A0 } else { Action::A1 };
        let step = self.env.step(action).map_err(SubmitError::Internal)?;
        let mut rec = TrialRecord::from_step(&step);
        rec.label_shown = Some(label);
        rec.timestamp_ms = Some(now_ms);
        self.trials.push(rec);
        Ok(Feedback {
            trial: step.trial,
            label,
            coins: step.outcome.coins,
            win: step.outcome.win,
            total: self.total(),
            done: self.is_done(),
        })
    }

    pub fn run_record(&self) -> RunRecord {
        let cfg = self.env.config();
        RunRecord {
            run_id: format!("session-{}", self.id),
            agent: AgentDescriptor::Human {
                participant: self.participant.clone().unwrap_or_else(|| self.id.clone()),
                condition: self.condition.clone(),
            },
            schedule: cfg.schedule.into(),
            seed: cfg.seed,
            n_trials: cfg.n_trials,
            status: if self.is_done() { RunStatus::Complete } else { RunStatus::Incomplete },
            trials: self.trials.clone(),
            invalid_attempt_count: 0,
        }
    }
}

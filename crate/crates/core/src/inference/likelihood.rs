//! Choice log-likelihood of the Dual RL and κDU models.

use crate::agents::{log_sigmoid, update, AgentParams, QValues, Reward, UpdateRule};
use crate::storage::RunRecord;
use crate::task_env::Action;

/// Choices and outcomes of one run, unpacked for repeated evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChoiceData {
    pub actions: Vec<Action>,
    pub wins: Vec<bool>,
}

impl ChoiceData {
    /// Uses every recorded trial; incomplete runs are thereby truncated at
    /// their last valid trial.
    pub fn from_run(run: &RunRecord) -> Self {
        ChoiceData {
            actions: run.trials.iter().map(|t| t.action).collect(),
            wins: run.trials.iter().map(|t| t.won()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `sum_t log P(a_t | Q_t)`, propagating Q with the rule's update.
pub fn loglik_data(rule: UpdateRule, p: &AgentParams, data: &ChoiceData) -> f64 {
    let mut q = QValues::default();
    let mut ll = 0.0;
    for (&a, &w) in data.actions.iter().zip(&data.wins) {
        let x = p.beta * q.diff();
        ll += match a {
            Action::A0 => log_sigmoid(x),
            Action::A1 => log_sigmoid(-x),
        };
        q = update(rule, q, a, Reward::from_win(w), p);
    }
    ll
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub n_trials: usize,
    /// Set when the run had no trials (value is then 0).
    pub empty: bool,
}

pub fn loglik(rule: UpdateRule, p: &AgentParams, run: &RunRecord) -> LogLik {
    let data = ChoiceData::from_run(run);
    LogLik {
        value: loglik_data(rule, p, &data),
        n_trials: data.len(),
        empty: data.is_empty(),
    }
}

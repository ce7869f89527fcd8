//! Two-option, three-state probabilistic reversal environment.
//!
//! A run starts in `S0`. Each trial samples a Bernoulli outcome for the chosen
//! option under the current latent state, then checks the switch trigger on
//! the within-segment choice history: a criterion switch when enough recent
//! choices matched the segment target, otherwise a timeout switch once the
//! segment reaches `timeout_trials`. A switch takes effect from the next trial.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// One of the two abstract options. Presentation labels live in the LLM gateway.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    A0,
    A1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::A0, Action::A1];

    pub fn complement(self) -> Action {
        match self {
            Action::A0 => Action::A1,
            Action::A1 => Action::A0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::A0 => 0,
            Action::A1 => 1,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::A0 => "A0",
            Action::A1 => "A1",
        })
    }
}

/// Latent task regime. Win probabilities are `[P(win|A0), P(win|A1)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LatentState {
    S0,
    S1,
    S2,
}

/// Win probabilities in percent, so regret sums stay exact.
const WIN_PCT: [[u32; 2]; 3] = [[80, 20], [50, 50], [20, 80]];

impl LatentState {
    pub const ALL: [LatentState; 3] = [LatentState::S0, LatentState::S1, LatentState::S2];

    pub fn id(self) -> usize {
        match self {
            LatentState::S0 => 0,
            LatentState::S1 => 1,
            LatentState::S2 => 2,
        }
    }

    pub fn from_id(id: usize) -> Option<LatentState> {
        Self::ALL.get(id).copied()
    }

    pub fn win_prob(self, action: Action) -> f64 {
        WIN_PCT[self.id()][action.index()] as f64 / 100.0
    }

    pub fn is_tie(self) -> bool {
        self == LatentState::S1
    }

    /// The unique optimal action, absent in the tie state.
    pub fn optimal_action(self) -> Option<Action> {
        match self {
            LatentState::S0 => Some(Action::A0),
            LatentState::S1 => None,
            LatentState::S2 => Some(Action::A1),
        }
    }

    /// `max_a P(win|a) - P(win|action)`.
    pub fn regret(self, action: Action) -> f64 {
        self.regret_pct(action) as f64 / 100.0
    }

    /// [`regret`](Self::regret) in percentage points.
    pub fn regret_pct(self, action: Action) -> u32 {
        let p = WIN_PCT[self.id()];
        p[0].max(p[1]) - p[action.index()]
    }
}

impl fmt::Display for LatentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.id())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// `S0 -> S1 -> S2 -> S0 -> ...`
    #[default]
    FixedCycle,
    /// Uniform over the two states other than the current one.
    RandomUniform,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed-cycle" | "FixedCycle" => Ok(ScheduleKind::FixedCycle),
            "random" | "random-uniform" | "RandomUniform" => Ok(ScheduleKind::RandomUniform),
            other => Err(Error::InvalidConfig(format!("unknown schedule '{other}' (expected fixed|random)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_trials: usize,
    pub window_len: usize,
    pub criterion_matches: usize,
    pub timeout_trials: usize,
    pub schedule: ScheduleKind,
    pub reward_magnitude: i32,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_trials: 250,
            window_len: 10,
            criterion_matches: 7,
            timeout_trials: 16,
            schedule: ScheduleKind::FixedCycle,
            reward_magnitude: 100,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn with_schedule(mut self, schedule: ScheduleKind) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trials(mut self, n_trials: usize) -> Self {
        self.n_trials = n_trials;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_trials == 0 {
            return fail("n_trials must be at least 1".into());
        }
        if self.window_len == 0 {
            return fail("window_len must be at least 1".into());
        }
        if self.criterion_matches == 0 || self.criterion_matches > self.window_len {
            return fail(format!(
                "criterion_matches ({}) must be in 1..={}",
                self.criterion_matches, self.window_len
            ));
        }
        if self.timeout_trials == 0 {
            return fail("timeout_trials must be at least 1".into());
        }
        if self.reward_magnitude <= 0 {
            return fail("reward_magnitude must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SwitchReason {
    Criterion,
    Timeout,
}

/// A latent-state switch, reported on the last trial of the old segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub trial: usize,
    pub reason: SwitchReason,
    pub old_state: LatentState,
    pub new_state: LatentState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub win: bool,
    pub coins: i32,
}

/// Everything observable (and latent) about one executed trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepResult {
    pub trial: usize,
    pub action: Action,
    /// State in force when the outcome was sampled.
    pub state: LatentState,
    pub segment: usize,
    pub outcome: Outcome,
    pub switch: Option<SwitchEvent>,
}

/// Criterion target: the better option, or in the tie state the option that
/// was worse in the preceding non-tie state.
pub fn target_option(state: LatentState, prev_non_tie: LatentState) -> Result<Action> {
    if prev_non_tie.is_tie() {
        return Err(Error::TiePrevState);
    }
    Ok(match state.optimal_action() {
        Some(a) => a,
        None => prev_non_tie.optimal_action().expect("non-tie state").complement(),
    })
}

/// Evaluates the switch trigger after a choice has been appended to `history`.
///
/// The criterion looks at the last `min(window_len, trials_in_segment)`
/// choices, so a segment can end by criterion as early as its
/// `criterion_matches`-th trial. Criterion wins over timeout.
pub fn check_switch(
    history: &[Action],
    target: Action,
    trials_in_segment: usize,
    cfg: &EnvConfig,
) -> Option<SwitchReason> {
    debug_assert_eq!(history.len(), trials_in_segment);
    let window = cfg.window_len.min(history.len());
    let matches = history[history.len() - window..].iter().filter(|&&a| a == target).count();
    if matches >= cfg.criterion_matches {
        Some(SwitchReason::Criterion)
    } else if trials_in_segment >= cfg.timeout_trials {
        Some(SwitchReason::Timeout)
    } else {
        None
    }
}

/// Picks the next latent state. `RandomUniform` consumes exactly one draw.
pub fn next_state<R: rand::Rng + ?Sized>(current: LatentState, schedule: ScheduleKind, rng: &mut R) -> LatentState {
    match schedule {
        ScheduleKind::FixedCycle => LatentState::from_id((current.id() + 1) % 3).unwrap(),
        ScheduleKind::RandomUniform => {
            let k = rng.random_range(1..3usize);
            LatentState::from_id((current.id() + k) % 3).unwrap()
        }
    }
}

/// One run's environment. Owns its generator; draw order is outcome first,
/// then the schedule draw when a switch fires.
#[derive(Clone, Debug)]
pub struct EnvState {
    cfg: EnvConfig,
    trial_index: usize,
    current_state: LatentState,
    segment_index: usize,
    segment_history: Vec<Action>,
    prev_non_tie_state: LatentState,
    rng: Rng,
}

impl EnvState {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = seed::rng(cfg.seed);
        Ok(EnvState {
            segment_history: Vec::with_capacity(cfg.timeout_trials),
            cfg,
            trial_index: 1,
            current_state: LatentState::S0,
            segment_index: 0,
            prev_non_tie_state: LatentState::S0,
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// 1-based index of the next trial to be played.
    pub fn trial_index(&self) -> usize {
        self.trial_index
    }

    pub fn current_state(&self) -> LatentState {
        self.current_state
    }

    pub fn segment_index(&self) -> usize {
        self.segment_index
    }

    pub fn trials_in_segment(&self) -> usize {
        self.segment_history.len()
    }

    pub fn segment_history(&self) -> &[Action] {
        &self.segment_history
    }

    pub fn prev_non_tie_state(&self) -> LatentState {
        self.prev_non_tie_state
    }

    pub fn is_finished(&self) -> bool {
        self.trial_index > self.cfg.n_trials
    }

    pub fn target(&self) -> Action {
        target_option(self.current_state, self.prev_non_tie_state).expect("prev_non_tie_state is never S1")
    }

    /// Plays one trial, sampling the outcome from the environment's generator.
    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        self.ensure_open()?;
        let p = self.current_state.win_prob(action);
        let win = self.rng.random::<f64>() < p;
        self.advance(action, win)
    }

    /// Plays one trial with a given outcome (forced draws, replays). No
    /// outcome draw is consumed; a schedule draw still is.
    pub fn step_with_outcome(&mut self, action: Action, win: bool) -> Result<StepResult> {
        self.ensure_open()?;
        self.advance(action, win)
    }

    fn ensure_open(&self) -> Result<()> {
        if self.is_finished() {
            return Err(Error::RunFinished {
                trial: self.trial_index,
                n_trials: self.cfg.n_trials,
            });
        }
        Ok(())
    }

    fn advance(&mut self, action: Action, win: bool) -> Result<StepResult> {
        let trial = self.trial_index;
        let state = self.current_state;
        let segment = self.segment_index;
        let coins = if win { self.cfg.reward_magnitude } else { -self.cfg.reward_magnitude };

        self.segment_history.push(action);
        let target = self.target();
        let reason = check_switch(&self.segment_history, target, self.segment_history.len(), &self.cfg);

        let switch = reason.map(|reason| {
            let new_state = next_state(state, self.cfg.schedule, &mut self.rng);
            if !state.is_tie() {
                self.prev_non_tie_state = state;
            }
            self.current_state = new_state;
            self.segment_index += 1;
            self.segment_history.clear();
            SwitchEvent {
                trial,
                reason,
                old_state: state,
                new_state,
            }
        });

        self.trial_index += 1;
        Ok(StepResult {
            trial,
            action,
            state,
            segment,
            outcome: Outcome { win, coins },
            switch,
        })
    }
}

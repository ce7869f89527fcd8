//! Forward-simulating agents.
//!
//! The learning agents keep one value per option, start at zero and choose
//! with a logistic softmax on the value difference. Dual RL updates only the
//! chosen value, with separate rates for wins and losses. κDU additionally
//! moves the unchosen value toward the counterfactual outcome `-r`, scaled by
//! `kappa`, using the learning rate selected by the obtained outcome.
//!
//! Agents see unit rewards `r = 2w - 1`; coin amounts stay in the records.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::seed::{self, Rng};
use crate::storage::{AgentDescriptor, RunRecord, RunStatus, TrialRecord};
use crate::task_env::{Action, EnvConfig, EnvState, LatentState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub eta_pos: f64,
    pub eta_neg: f64,
    pub beta: f64,
    /// Counterfactual weight; 0 for plain Dual RL.
    pub kappa: f64,
}

impl AgentParams {
    /// Learning rates are accepted on the closed unit interval so that the
    /// frozen-learner (`eta = 0`) baselines can be expressed; fitted values
    /// always lie strictly inside it.
    pub fn new(eta_pos: f64, eta_neg: f64, beta: f64, kappa: f64) -> Result<Self> {
        let p = AgentParams {
            eta_pos,
            eta_neg,
            beta,
            kappa,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dual(eta_pos: f64, eta_neg: f64, beta: f64) -> Result<Self> {
        Self::new(eta_pos, eta_neg, beta, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.eta_pos) || !unit(self.eta_neg) {
            return Err(Error::InvalidParams(format!(
                "learning rates must lie in [0,1] (eta_pos={}, eta_neg={})",
                self.eta_pos, self.eta_neg
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParams(format!("beta must be positive and finite (got {})", self.beta)));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::InvalidParams(format!("kappa must lie in [0,1) (got {})", self.kappa)));
        }
        Ok(())
    }

    pub fn eta(&self, r: Reward) -> f64 {
        match r {
            Reward::Win => self.eta_pos,
            Reward::Loss => self.eta_neg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Dual,
    Kdu,
}

impl UpdateRule {
    pub fn n_params(self) -> usize {
        match self {
            UpdateRule::Dual => 3,
            UpdateRule::Kdu => 4,
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateRule::Dual => "dual",
            UpdateRule::Kdu => "kdu",
        })
    }
}

impl std::str::FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dual" => Ok(UpdateRule::Dual),
            "kdu" | "dual-kdu" => Ok(UpdateRule::Kdu),
            other => Err(Error::InvalidConfig(format!("unknown rule '{other}' (expected dual|kdu)"))),
        }
    }
}

/// Signed unit reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reward {
    Win,
    Loss,
}

impl Reward {
    pub fn from_win(win: bool) -> Self {
        if win {
            Reward::Win
        } else {
            Reward::Loss
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Reward::Win => 1.0,
            Reward::Loss => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QValues {
    pub q: [f64; 2],
}

impl QValues {
    pub fn new(q0: f64, q1: f64) -> Self {
        QValues { q: [q0, q1] }
    }

    pub fn get(&self, a: Action) -> f64 {
        self.q[a.index()]
    }

    /// `Q[A0] - Q[A1]`.
    pub fn diff(&self) -> f64 {
        self.q[0] - self.q[1]
    }
}

/// Logistic function, stable for arguments of any magnitude.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow or cancellation.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability of choosing `A0`.
#[inline]
pub fn choice_prob(q: &QValues, beta: f64) -> f64 {
    sigmoid(beta * q.diff())
}

#[inline]
pub fn update_dual(q: QValues, chosen: Action, r: Reward, p: &AgentParams) -> QValues {
    let mut out = q;
    let i = chosen.index();
    let delta = r.value() - q.q[i];
    out.q[i] = q.q[i] + p.eta(r) * delta;
    out
}

#[inline]
pub fn update_kdu(q: QValues, chosen: Action, r: Reward, p: &AgentParams) -> QValues {
    let mut out = update_dual(q, chosen, r, p);
    if p.kappa != 0.0 {
        let j = chosen.complement().index();
        let delta_unchosen = -r.value() - q.q[j];
        out.q[j] = q.q[j] + p.kappa * p.eta(r) * delta_unchosen;
    }
    out
}

#[inline]
pub fn update(rule: UpdateRule, q: QValues, chosen: Action, r: Reward, p: &AgentParams) -> QValues {
    match rule {
        UpdateRule::Dual => update_dual(q, chosen, r, p),
        UpdateRule::Kdu => update_kdu(q, chosen, r, p),
    }
}

/// A choice policy that can be run through the task.
pub trait Policy {
    fn choose(&mut self, env: &EnvState, rng: &mut Rng) -> Action;
    fn observe(&mut self, action: Action, win: bool);
    fn descriptor(&self) -> AgentDescriptor;
}

/// Dual RL / κDU learner.
#[derive(Clone, Debug)]
pub struct RlAgent {
    params: AgentParams,
    rule: UpdateRule,
    q: QValues,
}

impl RlAgent {
    pub fn new(params: AgentParams, rule: UpdateRule) -> Result<Self> {
        params.validate()?;
        Ok(RlAgent {
            params,
            rule,
            q: QValues::default(),
        })
    }

    pub fn q(&self) -> QValues {
        self.q
    }
}

impl Policy for RlAgent {
    fn choose(&mut self, _env: &EnvState, rng: &mut Rng) -> Action {
        if rng.random::<f64>() < choice_prob(&self.q, self.params.beta) {
            Action::A0
        } else {
            Action::A1
        }
    }

    fn observe(&mut self, action: Action, win: bool) {
        self.q = update(self.rule, self.q, action, Reward::from_win(win), &self.params);
    }

    fn descriptor(&self) -> AgentDescriptor {
        AgentDescriptor::Synthetic {
            rule: self.rule,
            params: self.params,
        }
    }
}

/// Win-stay/lose-shift with given stay and shift probabilities. The first
/// choice is uniform.
#[derive(Clone, Debug)]
pub struct Wsls {
    p_stay_win: f64,
    p_shift_loss: f64,
    last: Option<(Action, bool)>,
}

impl Wsls {
    pub fn new(p_stay_win: f64, p_shift_loss: f64) -> Result<Self> {
        for (name, p) in [("p_stay_win", p_stay_win), ("p_shift_loss", p_shift_loss)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!("{name} must lie in [0,1] (got {p})")));
            }
        }
        Ok(Wsls {
            p_stay_win,
            p_shift_loss,
            last: None,
        })
    }
}

impl Policy for Wsls {
    fn choose(&mut self, _env: &EnvState, rng: &mut Rng) -> Action {
        match self.last {
            None => {
                if rng.random::<bool>() {
                    Action::A0
                } else {
                    Action::A1
                }
            }
            Some((a, true)) => {
                if rng.random::<f64>() < self.p_stay_win {
                    a
                } else {
                    a.complement()
                }
            }
            Some((a, false)) => {
                if rng.random::<f64>() < self.p_shift_loss {
                    a.complement()
                } else {
                    a
                }
            }
        }
    }

    fn observe(&mut self, action: Action, win: bool) {
        self.last = Some((action, win));
    }

    fn descriptor(&self) -> AgentDescriptor {
        AgentDescriptor::Scripted {
            policy: format!("wsls({},{})", self.p_stay_win, self.p_shift_loss),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Always(pub Action);

impl Policy for Always {
    fn choose(&mut self, _env: &EnvState, _rng: &mut Rng) -> Action {
        self.0
    }

    fn observe(&mut self, _action: Action, _win: bool) {}

    fn descriptor(&self) -> AgentDescriptor {
        AgentDescriptor::Scripted {
            policy: format!("always({})", self.0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UniformRandom;

impl Policy for UniformRandom {
    fn choose(&mut self, _env: &EnvState, rng: &mut Rng) -> Action {
        if rng.random::<bool>() {
            Action::A0
        } else {
            Action::A1
        }
    }

    fn observe(&mut self, _action: Action, _win: bool) {}

    fn descriptor(&self) -> AgentDescriptor {
        AgentDescriptor::Scripted {
            policy: "uniform_random".into(),
        }
    }
}

/// Reads the latent state and picks its target option. Calibration only.
#[derive(Clone, Copy, Debug)]
pub struct Oracle;

impl Policy for Oracle {
    fn choose(&mut self, env: &EnvState, _rng: &mut Rng) -> Action {
        env.current_state().optimal_action().unwrap_or_else(|| env.target())
    }

    fn observe(&mut self, _action: Action, _win: bool) {}

    fn descriptor(&self) -> AgentDescriptor {
        AgentDescriptor::Scripted { policy: "oracle".into() }
    }
}

/// Chooses the worse option of non-tie states, the tie target otherwise.
#[derive(Clone, Copy, Debug)]
pub struct AlwaysWrong;

impl Policy for AlwaysWrong {
    fn choose(&mut self, env: &EnvState, _rng: &mut Rng) -> Action {
        match env.current_state() {
            LatentState::S1 => env.target(),
            s => s.optimal_action().unwrap().complement(),
        }
    }

    fn observe(&mut self, _action: Action, _win: bool) {}

    fn descriptor(&self) -> AgentDescriptor {
        AgentDescriptor::Scripted {
            policy: "always_wrong".into(),
        }
    }
}

/// Runs any policy through a fresh environment for the full run length.
pub fn run_policy<P: Policy + ?Sized>(policy: &mut P, cfg: &EnvConfig, rng: &mut Rng) -> Result<RunRecord> {
    let mut env = EnvState::new(cfg.clone())?;
    let mut trials = Vec::with_capacity(cfg.n_trials);
    while !env.is_finished() {
        let action = policy.choose(&env, rng);
        let step = env.step(action)?;
        policy.observe(action, step.outcome.win);
        trials.push(TrialRecord::from_step(&step));
    }
    Ok(RunRecord {
        run_id: format!("run-{:016x}", cfg.seed),
        agent: policy.descriptor(),
        schedule: cfg.schedule.into(),
        seed: cfg.seed,
        n_trials: cfg.n_trials,
        status: RunStatus::Complete,
        trials,
        invalid_attempt_count: 0,
    })
}

pub fn simulate_run(p: &AgentParams, rule: UpdateRule, cfg: &EnvConfig, rng: &mut Rng) -> Result<RunRecord> {
    let mut agent = RlAgent::new(*p, rule)?;
    run_policy(&mut agent, cfg, rng)
}

/// Simulates `params.len()` independent runs. Run `i` uses environment seed
/// `derive(seed, i, ENV)` and agent seed `derive(seed, i, AGENT)`.
pub fn simulate_cohort(
    params: &[AgentParams],
    rule: UpdateRule,
    cfg: &EnvConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<RunRecord>> {
    exec.map_indexed(params.len(), |i| {
        let env_cfg = cfg.clone().with_seed(seed::derive(seed, i as u64, seed::stream::ENV));
        let mut rng = seed::rng(seed::derive(seed, i as u64, seed::stream::AGENT));
        let mut run = simulate_run(&params[i], rule, &env_cfg, &mut rng)?;
        run.run_id = format!("sim-{i:04}");
        Ok(run)
    })
    .into_iter()
    .collect()
}

/// Same as [`simulate_cohort`] for policies built per run by `make`.
pub fn simulate_policy_cohort<P, F>(make: F, n_runs: usize, cfg: &EnvConfig, seed: u64, exec: Exec) -> Result<Vec<RunRecord>>
where
    P: Policy,
    F: Fn(usize) -> Result<P> + Sync + Send,
{
    exec.map_indexed(n_runs, |i| {
        let env_cfg = cfg.clone().with_seed(seed::derive(seed, i as u64, seed::stream::ENV));
        let mut rng = seed::rng(seed::derive(seed, i as u64, seed::stream::AGENT));
        let mut policy = make(i)?;
        let mut run = run_policy(&mut policy, &env_cfg, &mut rng)?;
        run.run_id = format!("sim-{i:04}");
        Ok(run)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(eta_pos: f64, eta_neg: f64, beta: f64, kappa: f64) -> AgentParams {
        AgentParams::new(eta_pos, eta_neg, beta, kappa).unwrap()
    }

    #[test]
    fn choice_prob_examples() {
        assert_eq!(choice_prob(&QValues::new(0.3, 0.3), 7.0), 0.5);
        let v = choice_prob(&QValues::new(0.75, 0.0), 2.0);
        // 1 / (1 + e^-1.5)
        assert!((v - 0.817_574_476_193_643_7).abs() < 1e-12);
        let tiny = choice_prob(&QValues::new(0.0, 10.0), 10.0);
        assert!(tiny > 0.0 && tiny < 1e-43 && tiny.is_finite());
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(log_sigmoid(-800.0).is_finite());
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn update_dual_examples() {
        let q = update_dual(QValues::default(), Action::A0, Reward::Win, &p(0.5, 0.3, 1.0, 0.0));
        assert_eq!(q, QValues::new(0.5, 0.0));
        let q0 = QValues::new(0.5, 0.0);
        assert_eq!(update_dual(q0, Action::A0, Reward::Loss, &p(0.5, 0.0, 1.0, 0.0)), q0);
        for eta in [0.1, 0.5, 0.99] {
            let q = update_dual(QValues::new(1.0, 0.0), Action::A0, Reward::Win, &p(eta, 0.2, 1.0, 0.0));
            assert_eq!(q.q[0], 1.0);
        }
    }

    #[test]
    fn update_kdu_examples() {
        let q = update_kdu(QValues::default(), Action::A0, Reward::Win, &p(0.5, 0.3, 1.0, 0.5));
        assert_eq!(q, QValues::new(0.5, -0.25));
        assert_eq!(q.diff().abs(), 0.5 * (1.0 + 0.5));

        let q = update_kdu(QValues::new(0.3, -0.3), Action::A0, Reward::Loss, &p(0.4, 0.2, 1.0, 0.5));
        assert!((q.q[0] - 0.04).abs() < 1e-15);
        assert!((q.q[1] - (-0.17)).abs() < 1e-15);
    }

    #[test]
    fn scripted_probabilities_validated() {
        assert!(Wsls::new(1.1, 0.5).is_err());
        assert!(Wsls::new(0.5, -0.1).is_err());
        assert!(Wsls::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn params_validated() {
        assert!(AgentParams::new(1.2, 0.5, 1.0, 0.0).is_err());
        assert!(AgentParams::new(0.5, 0.5, 0.0, 0.0).is_err());
        assert!(AgentParams::new(0.5, 0.5, 1.0, 1.0).is_err());
        assert!(AgentParams::new(0.5, 0.5, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn frozen_learner_is_fair_coin() {
        let params = vec![p(0.0, 0.0, 5.0, 0.0); 40];
        let runs = simulate_cohort(&params, UpdateRule::Dual, &EnvConfig::default(), 17, Exec::Sequential).unwrap();
        let n = runs.iter().map(|r| r.trials.len()).sum::<usize>() as f64;
        let a0 = runs.iter().flat_map(|r| &r.trials).filter(|t| t.action == Action::A0).count() as f64;
        // 10_000 choices: SE 0.005
        assert!((a0 / n - 0.5).abs() < 0.02, "{}", a0 / n);
    }

    #[test]
    fn simulate_run_is_deterministic_and_tagged() {
        let params = p(0.5, 0.5, 5.0, 0.0);
        let cfg = EnvConfig::default().with_seed(4);
        let a = simulate_run(&params, UpdateRule::Dual, &cfg, &mut seed::rng(8)).unwrap();
        let b = simulate_run(&params, UpdateRule::Dual, &cfg, &mut seed::rng(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, RunStatus::Complete);
        assert_eq!(
            a.agent,
            AgentDescriptor::Synthetic {
                rule: UpdateRule::Dual,
                params
            }
        );
    }

    #[test]
    fn cohort_identical_across_exec_modes() {
        let params = vec![p(0.3, 0.2, 3.0, 0.4); 8];
        let cfg = EnvConfig::default();
        let a = simulate_cohort(&params, UpdateRule::Kdu, &cfg, 5, Exec::Sequential).unwrap();
        let b = simulate_cohort(&params, UpdateRule::Kdu, &cfg, 5, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn always_regret_per_trial() {
        assert_eq!(LatentState::S0.regret(Action::A0), 0.0);
        assert!((LatentState::S2.regret(Action::A0) - 0.6).abs() < 1e-15);
        assert_eq!(LatentState::S1.regret(Action::A0), 0.0);
    }

    fn action_strategy() -> impl Strategy<Value = Action> {
        prop_oneof![Just(Action::A0), Just(Action::A1)]
    }

    fn params_strategy() -> impl Strategy<Value = AgentParams> {
        (0.0..=1.0f64, 0.0..=1.0f64, 0.01..20.0f64, 0.0..0.999f64).prop_map(|(a, b, c, d)| p(a, b, c, d))
    }

    proptest! {
        #[test]
        fn q_values_stay_bounded(
            params in params_strategy(),
            seq in prop::collection::vec((action_strategy(), any::<bool>()), 1..300),
        ) {
            for rule in [UpdateRule::Dual, UpdateRule::Kdu] {
                let mut q = QValues::default();
                for &(a, w) in &seq {
                    q = update(rule, q, a, Reward::from_win(w), &params);
                    prop_assert!(q.q.iter().all(|v| (-1.0..=1.0).contains(v)), "{:?}", q);
                }
            }
        }

        #[test]
        fn kdu_with_zero_kappa_is_dual(
            params in params_strategy(),
            q0 in -1.0..=1.0f64, q1 in -1.0..=1.0f64,
            a in action_strategy(), w in any::<bool>(),
        ) {
            let params = AgentParams { kappa: 0.0, ..params };
            let q = QValues::new(q0, q1);
            let r = Reward::from_win(w);
            let x = update_kdu(q, a, r, &params);
            let y = update_dual(q, a, r, &params);
            prop_assert_eq!(x.q[0].to_bits(), y.q[0].to_bits());
            prop_assert_eq!(x.q[1].to_bits(), y.q[1].to_bits());
        }

        #[test]
        fn choice_prob_monotone(d1 in -2.0..2.0f64, d2 in -2.0..2.0f64, beta in 0.01..50.0f64) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(choice_prob(&QValues::new(lo, 0.0), beta) <= choice_prob(&QValues::new(hi, 0.0), beta));
            let b2 = beta * 1.5;
            let q = QValues::new(hi.abs(), 0.0);
            prop_assert!(choice_prob(&q, beta) <= choice_prob(&q, b2));
        }
    }
}

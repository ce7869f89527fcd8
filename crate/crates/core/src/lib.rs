//! Probabilistic reversal-learning evaluation stack.
//!
//! The crate covers the task environment (two options, three latent states,
//! criterion/timeout switching), forward-simulating reinforcement-learning
//! agents, reversal-sensitive behavioural metrics, hierarchical Bayesian
//! fitting of the Dual RL and Dual RL-κDU models, and the JSONL/CSV storage
//! formats shared by the CLI, the LLM gateway and the session service.
//!
//! Run-level work (simulating cohorts, per-run likelihood terms, chains) is
//! data-parallel. With the default `parallel` feature it is spread over a
//! rayon pool; without it every [`exec::Exec`] mode runs sequentially. Every
//! parallel item owns a generator derived from the caller's seed, so results
//! do not depend on the number of threads.

pub mod agents;
pub mod error;
pub mod exec;
pub mod inference;
pub mod metrics;
pub mod seed;
pub mod storage;
pub mod task_env;

pub use agents::{AgentParams, QValues, Reward, UpdateRule};
pub use error::{Error, Result};
pub use exec::Exec;
pub use storage::{RunRecord, RunStatus, TrialRecord};
pub use task_env::{Action, EnvConfig, EnvState, LatentState, ScheduleKind, SwitchEvent, SwitchReason};

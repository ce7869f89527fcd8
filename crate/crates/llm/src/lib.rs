//! Drives chat-completion models through the reversal task.
//!
//! Every trial renders a fixed-format system + user prompt from the run's
//! history, sends it to a [`ChatEndpoint`], and accepts the reply only if it
//! is exactly one of the two option labels after trimming whitespace. Invalid
//! replies are retried with a corrective message; a trial that exhausts the
//! retry budget ends its run, which is kept as `Incomplete`.

pub mod endpoint;
pub mod mock;
pub mod prompt;
pub mod runner;

pub use endpoint::{ChatEndpoint, ChatMessage, LlmEndpointConfig, OpenAiCompatible, RateLimiter, Role, TransportError};
pub use mock::MockModel;
pub use prompt::{corrective_message, parse_response, render_prompt, Invalid, PromptVariant};
pub use runner::{
    run_llm_experiment, run_llm_trial, AttemptLog, AttemptOutcome, ExperimentResult, ExperimentSummary, LlmTrialLog,
    TrialOutcome,
};

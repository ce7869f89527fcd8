//! Deterministic offline model implementing [`ChatEndpoint`].

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::endpoint::{ChatEndpoint, ChatMessage, Role, TransportError};
use crate::prompt::PromptVariant;

/// What a policy mock sees of a request.
#[derive(Clone, Debug, PartialEq)]
pub struct MockView<'a> {
    /// Trial being asked for (from "Choose for Trial t.").
    pub trial: usize,
    /// `(label, coins)` per earlier trial, parsed from the history lines.
    pub history: Vec<(char, i32)>,
    /// Corrective messages already in the transcript.
    pub corrections: usize,
    pub messages: &'a [ChatMessage],
}

impl<'a> MockView<'a> {
    pub fn parse(messages: &'a [ChatMessage]) -> Self {
        let mut users = messages.iter().filter(|m| m.role == Role::User);
        let prompt = users.next().map_or("", |m| m.content.as_str());
        let corrections = users.count();
        let mut trial = 0;
        let mut history = Vec::new();
        for line in prompt.lines() {
            if let Some(rest) = line.strip_prefix("- Trial ") {
                let label = rest.split("choice=").nth(1).and_then(|s| s.chars().next());
                let coins = rest.split("outcome=").nth(1).and_then(|s| s.trim().parse::<i32>().ok());
                if let (Some(l), Some(c)) = (label, coins) {
                    history.push((l, c));
                }
            } else if let Some(rest) = line.strip_prefix("Choose for Trial ") {
                trial = rest.trim_end_matches('.').parse().unwrap_or(0);
            }
        }
        MockView {
            trial,
            history,
            corrections,
            messages,
        }
    }
}

type PolicyFn = dyn Fn(&MockView<'_>) -> Result<String, TransportError> + Send + Sync;

enum Kind {
    Scripted(Mutex<VecDeque<Result<String, TransportError>>>),
    Policy(Box<PolicyFn>),
}

pub struct MockModel {
    kind: Kind,
}

impl std::fmt::Debug for MockModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            Kind::Scripted(q) => write!(f, "MockModel::Scripted({} left)", q.lock().map_or(0, |q| q.len())),
            Kind::Policy(_) => write!(f, "MockModel::Policy"),
        }
    }
}

impl MockModel {
    /// Replies with `replies` in order, across all requests; a transport
    /// error once exhausted.
    pub fn scripted<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::scripted_results(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn scripted_results(replies: impl IntoIterator<Item = Result<String, TransportError>>) -> Self {
        MockModel {
            kind: Kind::Scripted(Mutex::new(replies.into_iter().collect())),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&MockView<'_>) -> Result<String, TransportError> + Send + Sync + 'static,
    {
        MockModel {
            kind: Kind::Policy(Box::new(f)),
        }
    }

    pub fn always(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::from_fn(move |_| Ok(reply.clone()))
    }

    /// Win-stay/lose-shift on labels; opens with the label bound to `A0`.
    pub fn wsls(variant: PromptVariant) -> Self {
        Self::from_fn(move |v| {
            let label = match v.history.last() {
                None => variant.a0,
                Some(&(l, coins)) if coins > 0 => l,
                Some(&(l, _)) => {
                    if l == variant.a0 {
                        variant.a1
                    } else {
                        variant.a0
                    }
                }
            };
            Ok(label.to_string())
        })
    }

    /// Behaves like `inner` before trial `from`, then never answers validly.
    pub fn failing_from(from: usize, inner: MockModel) -> Self {
        Self::from_fn(move |v| {
            if v.trial >= from {
                Ok("I would rather not say.".into())
            } else {
                inner.complete(v.messages)
            }
        })
    }
}

impl ChatEndpoint for MockModel {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        match &self.kind {
            Kind::Scripted(q) => q
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .pop_front()
                .unwrap_or_else(|| Err(TransportError::new("mock script exhausted"))),
            Kind::Policy(f) => f(&MockView::parse(messages)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::render_prompt;
    use reversal_core::storage::TrialRecord;
    use reversal_core::{Action, EnvConfig};

    fn trial(t: usize, action: Action, win: bool) -> TrialRecord {
        TrialRecord {
            t,
            action,
            label_shown: None,
            win: win as u8,
            coins: if win { 100 } else { -100 },
            state: None,
            segment: None,
            switch_after: None,
            retries: 0,
            timestamp_ms: None,
        }
    }

    #[test]
    fn view_parses_rendered_prompt() {
        let v = PromptVariant::default();
        let hist = [trial(1, Action::A0, true), trial(2, Action::A1, false)];
        let msgs = render_prompt(&hist, 3, &v, &EnvConfig::default());
        let view = MockView::parse(&msgs);
        assert_eq!(view.trial, 3);
        assert_eq!(view.history, vec![('E', 100), ('V', -100)]);
        assert_eq!(view.corrections, 0);
        assert_eq!(MockModel::wsls(v).complete(&msgs).unwrap(), "E");
    }

    #[test]
    fn script_runs_out() {
        let m = MockModel::scripted(["E"]);
        assert_eq!(m.complete(&[]).unwrap(), "E");
        assert!(m.complete(&[]).is_err());
    }
}

//! Prompt rendering and strict response parsing.

use std::fmt;
use std::str::FromStr;

use reversal_core::storage::TrialRecord;
use reversal_core::{Action, EnvConfig, Error, Result};
use serde::{Deserialize, Serialize};

use crate::endpoint::ChatMessage;

/// Option labels and their presentation order.
///
/// `a0`/`a1` are the labels bound to the abstract actions. With `swapped`
/// the options are presented as "a1 and a0"; the binding is unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub a0: char,
    pub a1: char,
    pub swapped: bool,
}

impl Default for PromptVariant {
    fn default() -> Self {
        PromptVariant {
            a0: 'E',
            a1: 'V',
            swapped: false,
        }
    }
}

impl PromptVariant {
    pub fn new(a0: char, a1: char, swapped: bool) -> Result<Self> {
        let v = PromptVariant { a0, a1, swapped };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a0.is_ascii_uppercase() || !self.a1.is_ascii_uppercase() || self.a0 == self.a1 {
            return Err(Error::InvalidConfig(format!(
                "labels must be two distinct uppercase ASCII letters (got {:?}, {:?})",
                self.a0, self.a1
            )));
        }
        Ok(())
    }

    pub fn label(&self, a: Action) -> char {
        match a {
            Action::A0 => self.a0,
            Action::A1 => self.a1,
        }
    }

    pub fn action(&self, label: char) -> Option<Action> {
        if label == self.a0 {
            Some(Action::A0)
        } else if label == self.a1 {
            Some(Action::A1)
        } else {
            None
        }
    }

    /// Labels in presentation order.
    pub fn presented(&self) -> [char; 2] {
        if self.swapped {
            [self.a1, self.a0]
        } else {
            [self.a0, self.a1]
        }
    }
}

/// Short names: `ev` (default), `ve` (order swapped), `xy`, `wl`; or any
/// two distinct uppercase letters, e.g. `AB`.
impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ev" => return Ok(PromptVariant::default()),
            "ve" => return PromptVariant::new('E', 'V', true),
            "xy" => return PromptVariant::new('X', 'Y', false),
            "wl" => return PromptVariant::new('W', 'L', false),
            _ => {}
        }
        let chars: Vec<char> = s.chars().collect();
        match chars.as_slice() {
            [a, b] => PromptVariant::new(*a, *b, false),
            _ => Err(Error::InvalidConfig(format!("unknown prompt variant {s:?}"))),
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x, y] = self.presented();
        write!(f, "{x}{y}")
    }
}

fn system_text(v: &PromptVariant, cfg: &EnvConfig) -> String {
    let [x, y] = v.presented();
    let m = cfg.reward_magnitude;
    format!(
        "You are a space explorer choosing between two planets, {x} and {y}.\n\
         On every trial, the planet you choose results in either a gain of {m} gold coins (+{m}) or a loss of {m} gold coins (-{m}).\n\
         Throughout the mission, it may change multiple times which planet is more likely to yield +{m} and which is more likely to yield -{m}.\n\
         Feedback is probabilistic: even if you choose the planet that is more likely to yield +{m}, you may still receive -{m}.\n\
         Your goal is to maximise your total number of gold coins over exactly {n} trials.\n\
         Do not output any other words, punctuation, or explanations.\n\
         You must respond with exactly one uppercase character: {x} or {y}.",
        n = cfg.n_trials
    )
}

/// System and user message for trial `trial` (1-based), given every earlier
/// trial of the run.
pub fn render_prompt(history: &[TrialRecord], trial: usize, variant: &PromptVariant, cfg: &EnvConfig) -> Vec<ChatMessage> {
    debug_assert_eq!(trial, history.len() + 1);
    let mut user = format!("You have completed {} of {} trials.\nHistory:\n", history.len(), cfg.n_trials);
    for (k, t) in history.iter().enumerate() {
        let label = t.label_shown.unwrap_or_else(|| variant.label(t.action));
        user.push_str(&format!("- Trial {}: choice={label}, outcome={:+}\n", k + 1, t.coins));
    }
    user.push_str(&format!("Choose for Trial {trial}.\nAnswer:"));
    vec![ChatMessage::system(system_text(variant, cfg)), ChatMessage::user(user)]
}

/// Correction appended after an invalid reply.
pub fn corrective_message(variant: &PromptVariant) -> ChatMessage {
    let [x, y] = variant.presented();
    ChatMessage::user(format!(
        "Invalid response. Respond with exactly one uppercase character: {x} or {y}."
    ))
}

/// A reply that is not exactly one of the labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Invalid {
    pub raw: String,
}

pub fn parse_response(raw: &str, variant: &PromptVariant) -> std::result::Result<Action, Invalid> {
    let mut chars = raw.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => variant.action(c).ok_or_else(|| Invalid { raw: raw.to_string() }),
        _ => Err(Invalid { raw: raw.to_string() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let v = PromptVariant::default();
        assert_eq!(parse_response(" E\n", &v), Ok(Action::A0));
        assert_eq!(parse_response("V", &v), Ok(Action::A1));
        for bad in ["E.", "e", "E V", "", "  ", "EV", "X", "Answer: E"] {
            assert_eq!(parse_response(bad, &v), Err(Invalid { raw: bad.into() }), "{bad:?}");
        }
    }

    #[test]
    fn label_round_trip_all_presets() {
        for name in ["ev", "ve", "xy", "wl"] {
            let v: PromptVariant = name.parse().unwrap();
            for a in Action::ALL {
                assert_eq!(v.action(v.label(a)), Some(a));
                assert_eq!(parse_response(&v.label(a).to_string(), &v), Ok(a));
            }
        }
    }

    #[test]
    fn variant_validation() {
        assert!(PromptVariant::new('E', 'E', false).is_err());
        assert!(PromptVariant::new('e', 'V', false).is_err());
        assert!("abc".parse::<PromptVariant>().is_err());
        assert_eq!("AB".parse::<PromptVariant>().unwrap().a1, 'B');
        assert_eq!("ve".parse::<PromptVariant>().unwrap().to_string(), "VE");
    }

    #[test]
    fn empty_history() {
        let msgs = render_prompt(&[], 1, &PromptVariant::default(), &EnvConfig::default());
        assert_eq!(msgs[1].content, "You have completed 0 of 250 trials.\nHistory:\nChoose for Trial 1.\nAnswer:");
    }

    #[test]
    fn order_swap_changes_presentation_only() {
        let v: PromptVariant = "ve".parse().unwrap();
        let msgs = render_prompt(&[], 1, &v, &EnvConfig::default());
        assert!(msgs[0].content.contains("two planets, V and E."));
        assert!(msgs[0].content.ends_with("V or E."));
        assert_eq!(corrective_message(&v).content, "Invalid response. Respond with exactly one uppercase character: V or E.");
    }
}

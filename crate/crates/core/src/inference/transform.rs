//! Unconstrained parameterization: logit for learning rates and κ, log for β.

use serde::{Deserialize, Serialize};

use crate::agents::{sigmoid, AgentParams, UpdateRule};

pub const MAX_PARAMS: usize = 4;
pub const PARAM_NAMES: [&str; MAX_PARAMS] = ["eta_pos", "eta_neg", "beta", "kappa"];

/// Parameters on the unconstrained scale, in `PARAM_NAMES` order. Only the
/// first `rule.n_params()` entries are meaningful.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformedParams(pub [f64; MAX_PARAMS]);

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse transform of coordinate `k`.
#[inline]
pub fn coord_to_natural(k: usize, z: f64) -> f64 {
    if k == 2 {
        z.exp()
    } else {
        sigmoid(z)
    }
}

#[inline]
pub fn coord_to_transformed(k: usize, x: f64) -> f64 {
    if k == 2 {
        x.ln()
    } else {
        logit(x)
    }
}

impl TransformedParams {
    pub fn from_natural(rule: UpdateRule, p: &AgentParams) -> Self {
        let nat = [p.eta_pos, p.eta_neg, p.beta, p.kappa];
        let mut z = [0.0; MAX_PARAMS];
        for k in 0..rule.n_params() {
            z[k] = coord_to_transformed(k, nat[k]);
        }
        TransformedParams(z)
    }

    /// Maps back to natural parameters; κ is 0 for Dual RL.
    #[inline]
    pub fn to_natural(&self, rule: UpdateRule) -> AgentParams {
        let z = &self.0;
        AgentParams {
            eta_pos: sigmoid(z[0]),
            eta_neg: sigmoid(z[1]),
            beta: z[2].exp(),
            kappa: match rule {
                UpdateRule::Dual => 0.0,
                UpdateRule::Kdu => sigmoid(z[3]),
            },
        }
    }

    pub fn as_slice(&self, rule: UpdateRule) -> &[f64] {
        &self.0[..rule.n_params()]
    }
}

pub fn param_names(rule: UpdateRule) -> &'static [&'static str] {
    &PARAM_NAMES[..rule.n_params()]
}

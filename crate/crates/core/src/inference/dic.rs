//! Deviance information criterion.

use serde::{Deserialize, Serialize};

use super::hierarchical::PosteriorSummary;
use super::likelihood::{loglik_data, ChoiceData};
use crate::agents::UpdateRule;
use crate::error::{Error, Result};
use crate::storage::RunRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub rule: UpdateRule,
    /// Posterior mean deviance.
    pub d_bar: f64,
    /// Deviance at the posterior mean of the run-level parameters, taken on
    /// the transformed scale.
    pub d_hat: f64,
    pub p_d: f64,
    pub dic: f64,
    pub converged: bool,
}

/// DIC of a converged posterior. Non-converged posteriors are rejected.
pub fn dic(runs: &[RunRecord], posterior: &PosteriorSummary) -> Result<DicReport> {
    if !posterior.converged {
        return Err(Error::NotConverged {
            max_rhat: posterior.max_rhat,
        });
    }
    dic_unchecked(runs, posterior)
}

/// DIC without the convergence gate.
pub fn dic_unchecked(runs: &[RunRecord], posterior: &PosteriorSummary) -> Result<DicReport> {
    if runs.len() != posterior.n_runs() || runs.iter().zip(&posterior.run_ids).any(|(r, id)| &r.run_id != id) {
        return Err(Error::Inference("runs do not match the posterior's run ids".into()));
    }
    let total = posterior.total_draws();
    if total == 0 {
        return Err(Error::Inference("posterior has no draws".into()));
    }
    let d_bar = posterior
        .chains
        .iter()
        .flat_map(|c| c.deviance.iter())
        .sum::<f64>()
        / total as f64;
    let rule = posterior.rule;
    let d_hat = -2.0
        * posterior
            .run_means_transformed()
            .iter()
            .zip(runs)
            .map(|(z, run)| loglik_data(rule, &z.to_natural(rule), &ChoiceData::from_run(run)))
            .sum::<f64>();
    let p_d = d_bar - d_hat;
    Ok(DicReport {
        rule,
        d_bar,
        d_hat,
        p_d,
        dic: d_bar + p_d,
        converged: posterior.converged,
    })
}

/// DIC differences below this are not treated as evidence for the larger model.
pub const DIC_MARGIN: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DicComparison {
    pub models: Vec<DicReport>,
    /// Lowest DIC.
    pub best: UpdateRule,
    /// Fewest parameters among the models within [`DIC_MARGIN`] of `best`.
    pub preferred: UpdateRule,
    /// `DIC(model) - DIC(best)`, in `models` order.
    pub delta: Vec<f64>,
}

pub fn compare_dic(models: Vec<DicReport>) -> Result<DicComparison> {
    let best = models
        .iter()
        .min_by(|a, b| a.dic.total_cmp(&b.dic))
        .ok_or_else(|| Error::Inference("no models to compare".into()))?;
    let (best_rule, best_dic) = (best.rule, best.dic);
    let delta: Vec<f64> = models.iter().map(|m| m.dic - best_dic).collect();
    let preferred = models
        .iter()
        .zip(&delta)
        .filter(|(_, &d)| d < DIC_MARGIN)
        .min_by(|(a, da), (b, db)| a.rule.n_params().cmp(&b.rule.n_params()).then(da.total_cmp(db)))
        .map_or(best_rule, |(m, _)| m.rule);
    Ok(DicComparison {
        models,
        best: best_rule,
        preferred,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(rule: UpdateRule, dic: f64) -> DicReport {
        DicReport {
            rule,
            d_bar: 0.0,
            d_hat: 0.0,
            p_d: 0.0,
            dic,
            converged: true,
        }
    }

    #[test]
    fn comparison_picks_lowest() {
        let c = compare_dic(vec![report(UpdateRule::Dual, 510.0), report(UpdateRule::Kdu, 500.0)]).unwrap();
        assert_eq!(c.best, UpdateRule::Kdu);
        assert_eq!(c.delta, vec![10.0, 0.0]);
        assert_eq!(c.preferred, UpdateRule::Kdu);
        let close = compare_dic(vec![report(UpdateRule::Dual, 503.0), report(UpdateRule::Kdu, 500.0)]).unwrap();
        assert_eq!(close.best, UpdateRule::Kdu);
        assert_eq!(close.preferred, UpdateRule::Dual);
        assert!(compare_dic(vec![]).is_err());
    }
}

//! Parameter recovery: simulate a cohort from known group parameters, fit
//! the hierarchy, and compare.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hierarchical::{fit_hierarchical, HierarchicalModelSpec, McmcConfig, PosteriorSummary};
use super::transform::{param_names, TransformedParams, MAX_PARAMS};
use crate::agents::{simulate_cohort, AgentParams, UpdateRule};
use crate::error::Result;
use crate::seed;
use crate::storage::RunRecord;
use crate::task_env::EnvConfig;

/// Generating group parameters. Run-level parameters are drawn as
/// `z_i = transform(mean) + sd * N(0, 1)` per transformed coordinate, so
/// `mean` is the population-mean parameter mapped to the natural scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub mean: AgentParams,
    pub sd: [f64; MAX_PARAMS],
}

impl GroupTruth {
    pub fn new(mean: AgentParams, sd: f64) -> Self {
        GroupTruth {
            mean,
            sd: [sd; MAX_PARAMS],
        }
    }

    pub fn sample_runs(&self, rule: UpdateRule, n_runs: usize, seed: u64) -> Vec<AgentParams> {
        let mu = TransformedParams::from_natural(rule, &self.mean);
        (0..n_runs)
            .map(|i| {
                let mut rng = seed::rng(seed::derive(seed, i as u64, seed::stream::RUN_PARAMS));
                let mut z = mu;
                for k in 0..rule.n_params() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    z.0[k] += self.sd[k] * e;
                }
                z.to_natural(rule)
            })
            .collect()
    }

    fn natural(&self, k: usize) -> f64 {
        [self.mean.eta_pos, self.mean.eta_neg, self.mean.beta, self.mean.kappa][k]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub param: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub covered: bool,
    pub rhat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rule: UpdateRule,
    pub n_runs: usize,
    pub rows: Vec<RecoveryRow>,
    pub converged: bool,
    pub max_rhat: f64,
}

impl RecoveryReport {
    pub fn row(&self, param: &str) -> Option<&RecoveryRow> {
        self.rows.iter().find(|r| r.param == param)
    }

    pub fn n_covered(&self) -> usize {
        self.rows.iter().filter(|r| r.covered).count()
    }
}

pub fn compare_to_truth(posterior: &PosteriorSummary, truth: &GroupTruth) -> RecoveryReport {
    let rows = param_names(posterior.rule)
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let g = &posterior.group[k];
            let t = truth.natural(k);
            RecoveryRow {
                param: name.to_string(),
                truth: t,
                mean: g.mean,
                sd: g.sd,
                q025: g.q025,
                q975: g.q975,
                abs_error: (g.mean - t).abs(),
                rel_error: (g.mean - t).abs() / t.abs(),
                covered: g.covers(t),
                rhat: g.rhat,
            }
        })
        .collect();
    RecoveryReport {
        rule: posterior.rule,
        n_runs: posterior.n_runs(),
        rows,
        converged: posterior.converged,
        max_rhat: posterior.max_rhat,
    }
}

/// Simulates `n_runs` runs from `truth`, fits `spec`, and reports recovery of
/// the group means. Also returns the simulated runs and the posterior.
pub fn recovery_study(
    spec: &HierarchicalModelSpec,
    truth: &GroupTruth,
    n_runs: usize,
    env: &EnvConfig,
    data_seed: u64,
    mcmc: &McmcConfig,
) -> Result<(RecoveryReport, Vec<RunRecord>, PosteriorSummary)> {
    let params = truth.sample_runs(spec.rule, n_runs, data_seed);
    let runs = simulate_cohort(&params, spec.rule, env, data_seed, mcmc.exec)?;
    let posterior = fit_hierarchical(spec, &runs, mcmc)?;
    Ok((compare_to_truth(&posterior, truth), runs, posterior))
}

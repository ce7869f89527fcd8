//! Posterior predictive checks on cohort-level behavioural statistics.

use serde::{Deserialize, Serialize};

use super::diagnostics::quantile_sorted;
use super::hierarchical::PosteriorSummary;
use crate::agents::simulate_run;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{run_metrics, RunMetrics};
use crate::seed;
use crate::storage::RunRecord;
use crate::task_env::EnvConfig;

#[derive(Clone, Debug)]
pub struct PpcConfig {
    /// Number of simulated replicate cohorts.
    pub n_sim: usize,
    pub seed: u64,
    pub exec: Exec,
    /// Reject non-converged posteriors.
    pub require_converged: bool,
}

impl Default for PpcConfig {
    fn default() -> Self {
        PpcConfig {
            n_sim: 200,
            seed: 0,
            exec: Exec::Parallel,
            require_converged: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcMetric {
    pub metric: String,
    pub observed: Option<f64>,
    pub sim_mean: f64,
    pub sim_q025: f64,
    pub sim_q50: f64,
    pub sim_q975: f64,
    /// `P(sim > observed) + P(sim == observed) / 2`.
    pub p_value: Option<f64>,
}

impl PpcMetric {
    pub fn is_extreme(&self, lo: f64, hi: f64) -> bool {
        self.p_value.is_some_and(|p| p <= lo || p >= hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub n_sim: usize,
    pub metrics: Vec<PpcMetric>,
}

impl PpcReport {
    pub fn get(&self, metric: &str) -> Option<&PpcMetric> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    pub fn all_within(&self, lo: f64, hi: f64) -> bool {
        self.metrics.iter().all(|m| !m.is_extreme(lo, hi))
    }
}

const METRICS: [&str; 4] = ["win_stay", "lose_shift", "perseveration", "total_wins"];

fn cohort_stats(rows: &[RunMetrics]) -> [Option<f64>; 4] {
    let mean = |f: &dyn Fn(&RunMetrics) -> Option<f64>| {
        let xs: Vec<f64> = rows.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    [
        mean(&|m| m.win_stay),
        mean(&|m| m.lose_shift),
        mean(&|m| m.mean_perseveration),
        mean(&|m| Some(m.total_wins as f64)),
    ]
}

/// Simulates `n_sim` replicate cohorts. Replicate `s` takes the run-level
/// parameters of one posterior draw (draws evenly spaced over all chains)
/// and gives every observed run a fresh run of the same length in the task
/// described by `env`. Each statistic is the cohort mean of the run-level
/// measure.
pub fn posterior_predictive(
    observed: &[RunRecord],
    posterior: &PosteriorSummary,
    env: &EnvConfig,
    cfg: &PpcConfig,
) -> Result<PpcReport> {
    if cfg.n_sim == 0 {
        return Err(Error::InvalidConfig("n_sim must be positive".into()));
    }
    if cfg.require_converged && !posterior.converged {
        return Err(Error::NotConverged {
            max_rhat: posterior.max_rhat,
        });
    }
    if observed.len() != posterior.n_runs() {
        return Err(Error::Inference(format!(
            "{} observed runs but the posterior has {}",
            observed.len(),
            posterior.n_runs()
        )));
    }
    let obs_rows: Vec<RunMetrics> = observed.iter().map(run_metrics).collect::<Result<_>>()?;
    let obs = cohort_stats(&obs_rows);

    let draws: Vec<(usize, usize)> = posterior.draw_indices().collect();
    let rule = posterior.rule;
    let sims: Vec<[Option<f64>; 4]> = cfg
        .exec
        .map_indexed(cfg.n_sim, |s| -> Result<[Option<f64>; 4]> {
            let (c, d) = draws[s * draws.len() / cfg.n_sim];
            let base = seed::derive(cfg.seed, s as u64, seed::stream::PPC);
            let rows = observed
                .iter()
                .enumerate()
                .map(|(i, run)| {
                    let p = posterior.run_draw(c, d, i);
                    let env_cfg = env
                        .clone()
                        .with_trials(run.trials.len().max(1))
                        .with_seed(seed::derive(base, i as u64, seed::stream::ENV));
                    let mut rng = seed::rng(seed::derive(base, i as u64, seed::stream::AGENT));
                    run_metrics(&simulate_run(&p, rule, &env_cfg, &mut rng)?)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(cohort_stats(&rows))
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let metrics = METRICS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut xs: Vec<f64> = sims.iter().filter_map(|s| s[k]).collect();
            xs.sort_by(f64::total_cmp);
            let p_value = obs[k].filter(|_| !xs.is_empty()).map(|o| {
                let above = xs.iter().filter(|&&x| x > o).count() as f64;
                let ties = xs.iter().filter(|&&x| x == o).count() as f64;
                (above + 0.5 * ties) / xs.len() as f64
            });
            PpcMetric {
                metric: name.to_string(),
                observed: obs[k],
                sim_mean: xs.iter().sum::<f64>() / xs.len() as f64,
                sim_q025: quantile_sorted(&xs, 0.025),
                sim_q50: quantile_sorted(&xs, 0.5),
                sim_q975: quantile_sorted(&xs, 0.975),
                p_value,
            }
        })
        .collect();
    Ok(PpcReport {
        n_sim: cfg.n_sim,
        metrics,
    })
}

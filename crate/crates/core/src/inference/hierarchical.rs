//! Hierarchical Bayesian fit by Metropolis-within-Gibbs.
//!
//! Model, per transformed parameter `k` and run `i`:
//!
//! ```text
//! mu_k    ~ Normal(m_k, s_k^2)
//! sigma_k ~ HalfNormal(h_k)
//! z_ik    ~ Normal(mu_k, sigma_k^2)
//! a_it    ~ Bernoulli(sigmoid(beta_i * dQ_it))       (Q propagated by the rule)
//! ```
//!
//! One sweep updates every `z_ik` by random-walk Metropolis (runs in
//! parallel, each with its own generator), draws `mu_k` from its conjugate
//! normal conditional, updates `sigma_k` by random-walk Metropolis on
//! `log sigma_k`, and then applies two non-centered moves per parameter (a
//! joint shift of `mu_k` and all `z_ik`, and a joint rescaling of `sigma_k`
//! and the deviations `z_ik - mu_k`). The non-centered moves keep the
//! group-level parameters mixing when runs carry little information about a
//! parameter. Step sizes adapt during warmup only.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::diagnostics::{ess, mean_sd, quantile_sorted, split_rhat};
use super::likelihood::{loglik_data, ChoiceData};
use super::map::{map_fit, MapConfig, MapPrior};
use super::transform::{coord_to_natural, param_names, TransformedParams, MAX_PARAMS};
use crate::agents::{AgentParams, UpdateRule};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::seed::{self, Rng};
use crate::storage::RunRecord;

/// Convergence gate on split-R̂.
pub const RHAT_GATE: f64 = 1.1;

/// Group-level hyperpriors on the transformed scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub mu_mean: [f64; MAX_PARAMS],
    pub mu_sd: [f64; MAX_PARAMS],
    /// Half-normal scale of each group SD.
    pub sigma_scale: [f64; MAX_PARAMS],
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            mu_mean: [0.0, 0.0, 1.0, 0.0],
            mu_sd: [1.5, 1.5, 1.0, 1.5],
            sigma_scale: [1.0; MAX_PARAMS],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalModelSpec {
    pub rule: UpdateRule,
    pub priors: Priors,
}

impl HierarchicalModelSpec {
    pub fn new(rule: UpdateRule) -> Self {
        HierarchicalModelSpec {
            rule,
            priors: Priors::default(),
        }
    }

    /// Prior used for MAP initialization: the group-mean hyperprior widened
    /// by one unit of group spread.
    pub fn map_prior(&self) -> MapPrior {
        let mut sd = [1.0; MAX_PARAMS];
        for (k, s) in sd.iter_mut().enumerate() {
            *s = (self.priors.mu_sd[k].powi(2) + self.priors.sigma_scale[k].powi(2)).sqrt();
        }
        MapPrior::Normal {
            mean: self.priors.mu_mean,
            sd,
        }
    }
}

#[derive(Clone, Debug)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub exec: Exec,
    /// Non-centered shift/scale moves for the group parameters.
    pub interweave: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            seed: 0,
            exec: Exec::Parallel,
            interweave: true,
        }
    }
}

/// Post-warmup draws of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub mu: Vec<[f64; MAX_PARAMS]>,
    pub sigma: Vec<[f64; MAX_PARAMS]>,
    /// Draw-major: `z[d * n_runs + i]`.
    pub z: Vec<TransformedParams>,
    pub deviance: Vec<f64>,
    /// Mean acceptance rate of run-level proposals after warmup.
    pub run_acceptance: f64,
}

impl Chain {
    pub fn n_draws(&self) -> usize {
        self.deviance.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl ParamSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub rule: UpdateRule,
    pub run_ids: Vec<String>,
    pub chains: Vec<Chain>,
    /// Group-mean parameters mapped to the natural scale, draw by draw.
    pub group: Vec<ParamSummary>,
    /// Group SDs on the transformed scale.
    pub group_sd: Vec<ParamSummary>,
    /// Largest split-R̂ over run-level parameters.
    pub max_rhat_run_level: f64,
    /// Largest split-R̂ over every sampled quantity.
    pub max_rhat: f64,
    pub converged: bool,
    pub deviance_mean: f64,
}

impl PosteriorSummary {
    pub fn n_runs(&self) -> usize {
        self.run_ids.len()
    }

    pub fn group_param(&self, name: &str) -> Option<&ParamSummary> {
        self.group.iter().find(|p| p.name == name)
    }

    /// Posterior mean of each run's parameters on the transformed scale.
    pub fn run_means_transformed(&self) -> Vec<TransformedParams> {
        let n = self.n_runs();
        let dim = self.rule.n_params();
        let mut acc = vec![[0.0; MAX_PARAMS]; n];
        let mut count = 0usize;
        for c in &self.chains {
            for d in 0..c.n_draws() {
                for (i, a) in acc.iter_mut().enumerate() {
                    let z = &c.z[d * n + i].0;
                    for k in 0..dim {
                        a[k] += z[k];
                    }
                }
                count += 1;
            }
        }
        acc.into_iter()
            .map(|a| {
                let mut z = [0.0; MAX_PARAMS];
                for k in 0..dim {
                    z[k] = a[k] / count as f64;
                }
                TransformedParams(z)
            })
            .collect()
    }

    /// Iterates over all post-warmup draws as `(chain, draw)`.
    pub fn draw_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.chains
            .iter()
            .enumerate()
            .flat_map(|(c, ch)| (0..ch.n_draws()).map(move |d| (c, d)))
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.n_draws()).sum()
    }

    pub fn run_draw(&self, chain: usize, draw: usize, run: usize) -> AgentParams {
        self.chains[chain].z[draw * self.n_runs() + run].to_natural(self.rule)
    }

    pub fn report(&self) -> SummaryReport {
        SummaryReport {
            rule: self.rule,
            n_runs: self.n_runs(),
            chains: self.chains.len(),
            draws_per_chain: self.chains.first().map_or(0, |c| c.n_draws()),
            group: self.group.clone(),
            group_sd: self.group_sd.clone(),
            max_rhat: self.max_rhat,
            max_rhat_run_level: self.max_rhat_run_level,
            converged: self.converged,
            deviance_mean: self.deviance_mean,
        }
    }

    /// Long-format CSV: `chain,draw,parameter,value`. Group means are on the
    /// natural scale; group SDs and run-level parameters on the transformed
    /// scale.
    pub fn write_draws_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["chain", "draw", "parameter", "value"])?;
        let names = param_names(self.rule);
        let n = self.n_runs();
        for (c, ch) in self.chains.iter().enumerate() {
            for d in 0..ch.n_draws() {
                let (cs, ds) = (c.to_string(), d.to_string());
                for (k, name) in names.iter().enumerate() {
                    w.write_record([&cs, &ds, &format!("mu_{name}"), &coord_to_natural(k, ch.mu[d][k]).to_string()])?;
                    w.write_record([&cs, &ds, &format!("sigma_{name}"), &ch.sigma[d][k].to_string()])?;
                }
                w.write_record([&cs, &ds, "deviance", &ch.deviance[d].to_string()])?;
                for i in 0..n {
                    let z = &ch.z[d * n + i].0;
                    for (k, name) in names.iter().enumerate() {
                        w.write_record([&cs, &ds, &format!("z_{name}[{}]", self.run_ids[i]), &z[k].to_string()])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Serializable summary (no draws).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub rule: UpdateRule,
    pub n_runs: usize,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub group: Vec<ParamSummary>,
    pub group_sd: Vec<ParamSummary>,
    pub max_rhat: f64,
    pub max_rhat_run_level: f64,
    pub converged: bool,
    pub deviance_mean: f64,
}

#[derive(Clone, Debug)]
struct RunState {
    z: [f64; MAX_PARAMS],
    ll: f64,
    log_step: [f64; MAX_PARAMS],
    accepted: [u32; MAX_PARAMS],
    tried: [u32; MAX_PARAMS],
    rng: Rng,
}

#[derive(Clone, Copy, Debug, Default)]
struct Adapt {
    log_step: f64,
    accepted: u32,
    tried: u32,
}

impl Adapt {
    fn new(step: f64) -> Self {
        Adapt {
            log_step: step.ln(),
            ..Default::default()
        }
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }

    fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += accepted as u32;
    }

    fn tune(&mut self, batch: usize, target: f64) {
        if self.tried == 0 {
            return;
        }
        let rate = self.accepted as f64 / self.tried as f64;
        let delta = (1.0 / (batch as f64).sqrt()).min(0.5);
        self.log_step += if rate > target { delta } else { -delta };
        self.accepted = 0;
        self.tried = 0;
    }
}

const ADAPT_BATCH: usize = 50;
const RUN_TARGET: f64 = 0.44;

#[inline]
fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Sampler<'a> {
    rule: UpdateRule,
    dim: usize,
    priors: &'a Priors,
    data: &'a [ChoiceData],
    exec: Exec,
    interweave: bool,
}

impl Sampler<'_> {
    fn ll(&self, i: usize, z: &[f64; MAX_PARAMS]) -> f64 {
        let v = loglik_data(self.rule, &TransformedParams(*z).to_natural(self.rule), &self.data[i]);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn update_runs(&self, runs: &mut [RunState], mu: &[f64; MAX_PARAMS], sigma: &[f64; MAX_PARAMS]) {
        self.exec.for_each_mut(runs, |i, st| {
            for k in 0..self.dim {
                let step = st.log_step[k].exp();
                let mut prop = st.z;
                prop[k] += step * normal(&mut st.rng);
                let ll_prop = self.ll(i, &prop);
                let dz_old = (st.z[k] - mu[k]) / sigma[k];
                let dz_new = (prop[k] - mu[k]) / sigma[k];
                let log_ratio = ll_prop - st.ll - 0.5 * (dz_new * dz_new - dz_old * dz_old);
                st.tried[k] += 1;
                if log_ratio >= 0.0 || st.rng.random::<f64>().ln() < log_ratio {
                    st.z = prop;
                    st.ll = ll_prop;
                    st.accepted[k] += 1;
                }
            }
        });
    }

    fn log_sigma_target(&self, k: usize, sigma: f64, ss: f64, n: usize) -> f64 {
        // Σ log N(z | mu, sigma) + log HalfNormal(sigma) + log|d sigma / d log sigma|
        let h = self.priors.sigma_scale[k];
        -(n as f64) * sigma.ln() - ss / (2.0 * sigma * sigma) - sigma * sigma / (2.0 * h * h) + sigma.ln()
    }

    #[allow(clippy::too_many_arguments)]
    fn update_group(
        &self,
        runs: &mut [RunState],
        mu: &mut [f64; MAX_PARAMS],
        sigma: &mut [f64; MAX_PARAMS],
        sigma_adapt: &mut [Adapt; MAX_PARAMS],
        shift_adapt: &mut [Adapt; MAX_PARAMS],
        scale_adapt: &mut [Adapt; MAX_PARAMS],
        rng: &mut Rng,
    ) {
        let n = runs.len();
        for k in 0..self.dim {
            // mu_k | z, sigma_k
            let s0 = self.priors.mu_sd[k];
            let sum: f64 = runs.iter().map(|r| r.z[k]).sum();
            let prec = 1.0 / (s0 * s0) + n as f64 / (sigma[k] * sigma[k]);
            let m = (self.priors.mu_mean[k] / (s0 * s0) + sum / (sigma[k] * sigma[k])) / prec;
            mu[k] = m + normal(rng) / prec.sqrt();

            // sigma_k | z, mu_k
            let ss: f64 = runs.iter().map(|r| (r.z[k] - mu[k]).powi(2)).sum();
            for _ in 0..3 {
                let prop = sigma[k] * (sigma_adapt[k].step() * normal(rng)).exp();
                let log_ratio = self.log_sigma_target(k, prop, ss, n) - self.log_sigma_target(k, sigma[k], ss, n);
                let acc = rng.random::<f64>().ln() < log_ratio;
                if acc {
                    sigma[k] = prop;
                }
                sigma_adapt[k].record(acc);
            }

            if !self.interweave {
                continue;
            }

            // shift: mu_k and every z_ik move together; deviations unchanged
            let c = shift_adapt[k].step() * normal(rng);
            let proposals: Vec<f64> = self.exec.map_indexed(n, |i| {
                let mut z = runs[i].z;
                z[k] += c;
                self.ll(i, &z)
            });
            let d_ll: f64 = proposals.iter().zip(runs.iter()).map(|(p, r)| p - r.ll).sum();
            let d_prior = {
                let (a, b) = ((mu[k] + c - self.priors.mu_mean[k]) / s0, (mu[k] - self.priors.mu_mean[k]) / s0);
                -0.5 * (a * a - b * b)
            };
            let acc = rng.random::<f64>().ln() < d_ll + d_prior;
            if acc {
                mu[k] += c;
                for (r, p) in runs.iter_mut().zip(proposals) {
                    r.z[k] += c;
                    r.ll = p;
                }
            }
            shift_adapt[k].record(acc);

            // scale: sigma_k and every deviation z_ik - mu_k rescale together
            let log_f = scale_adapt[k].step() * normal(rng);
            let f = log_f.exp();
            let m = mu[k];
            let proposals: Vec<f64> = self.exec.map_indexed(n, |i| {
                let mut z = runs[i].z;
                z[k] = m + f * (z[k] - m);
                self.ll(i, &z)
            });
            let d_ll: f64 = proposals.iter().zip(runs.iter()).map(|(p, r)| p - r.ll).sum();
            let h = self.priors.sigma_scale[k];
            let new_sigma = sigma[k] * f;
            let d_prior = -(new_sigma * new_sigma - sigma[k] * sigma[k]) / (2.0 * h * h) + log_f;
            let acc = rng.random::<f64>().ln() < d_ll + d_prior;
            if acc {
                sigma[k] = new_sigma;
                for (r, p) in runs.iter_mut().zip(proposals) {
                    r.z[k] = m + f * (r.z[k] - m);
                    r.ll = p;
                }
            }
            scale_adapt[k].record(acc);
        }
    }

    fn run_chain(&self, init: &[TransformedParams], cfg: &McmcConfig, chain: usize) -> Result<Chain> {
        let chain_seed = seed::derive(cfg.seed, chain as u64, seed::stream::CHAIN);
        let mut rng = seed::rng(chain_seed);
        let n = init.len();

        let mut runs: Vec<RunState> = init
            .iter()
            .enumerate()
            .map(|(i, z0)| {
                let mut rrng = seed::rng(seed::derive(chain_seed, i as u64, seed::stream::RUN_PARAMS));
                let mut z = z0.0;
                for v in z.iter_mut().take(self.dim) {
                    *v += 0.3 * normal(&mut rrng);
                }
                RunState {
                    z,
                    ll: 0.0,
                    log_step: [0.5f64.ln(); MAX_PARAMS],
                    accepted: [0; MAX_PARAMS],
                    tried: [0; MAX_PARAMS],
                    rng: rrng,
                }
            })
            .collect();
        for (i, r) in runs.iter_mut().enumerate() {
            r.ll = self.ll(i, &r.z);
        }

        let mut mu = [0.0; MAX_PARAMS];
        let mut sigma = [1.0; MAX_PARAMS];
        for k in 0..self.dim {
            let xs: Vec<f64> = runs.iter().map(|r| r.z[k]).collect();
            let (m, sd) = mean_sd(&xs);
            mu[k] = m;
            sigma[k] = if sd.is_finite() { sd.clamp(0.05, 3.0) } else { 0.5 };
        }
        let mut sigma_adapt = [Adapt::new(0.3); MAX_PARAMS];
        let mut shift_adapt = [Adapt::new(0.1); MAX_PARAMS];
        let mut scale_adapt = [Adapt::new(0.1); MAX_PARAMS];

        let mut out = Chain {
            mu: Vec::with_capacity(cfg.samples),
            sigma: Vec::with_capacity(cfg.samples),
            z: Vec::with_capacity(cfg.samples * n),
            deviance: Vec::with_capacity(cfg.samples),
            run_acceptance: 0.0,
        };

        for it in 0..cfg.warmup + cfg.samples {
            self.update_runs(&mut runs, &mu, &sigma);
            self.update_group(
                &mut runs,
                &mut mu,
                &mut sigma,
                &mut sigma_adapt,
                &mut shift_adapt,
                &mut scale_adapt,
                &mut rng,
            );

            if let Some((i, r)) = runs.iter().enumerate().find(|(_, r)| !r.ll.is_finite()) {
                return Err(Error::Inference(format!(
                    "chain {chain} iteration {it}: non-finite log-likelihood for run {i} at z={:?} (mu={:?}, sigma={:?})",
                    &r.z[..self.dim],
                    &mu[..self.dim],
                    &sigma[..self.dim]
                )));
            }

            if it < cfg.warmup {
                if (it + 1) % ADAPT_BATCH == 0 {
                    let batch = (it + 1) / ADAPT_BATCH;
                    for r in runs.iter_mut() {
                        for k in 0..self.dim {
                            if r.tried[k] > 0 {
                                let rate = r.accepted[k] as f64 / r.tried[k] as f64;
                                let delta = (1.0 / (batch as f64).sqrt()).min(0.5);
                                r.log_step[k] += if rate > RUN_TARGET { delta } else { -delta };
                            }
                        }
                        r.accepted = [0; MAX_PARAMS];
                        r.tried = [0; MAX_PARAMS];
                    }
                    for k in 0..self.dim {
                        sigma_adapt[k].tune(batch, RUN_TARGET);
                        shift_adapt[k].tune(batch, RUN_TARGET);
                        scale_adapt[k].tune(batch, RUN_TARGET);
                    }
                }
                if it + 1 == cfg.warmup {
                    for r in runs.iter_mut() {
                        r.accepted = [0; MAX_PARAMS];
                        r.tried = [0; MAX_PARAMS];
                    }
                }
                continue;
            }

            out.mu.push(mu);
            out.sigma.push(sigma);
            out.z.extend(runs.iter().map(|r| TransformedParams(r.z)));
            out.deviance.push(-2.0 * runs.iter().map(|r| r.ll).sum::<f64>());
        }

        let (acc, tried) = runs.iter().fold((0u64, 0u64), |(a, t), r| {
            (
                a + r.accepted[..self.dim].iter().map(|&x| x as u64).sum::<u64>(),
                t + r.tried[..self.dim].iter().map(|&x| x as u64).sum::<u64>(),
            )
        });
        out.run_acceptance = if tried > 0 { acc as f64 / tried as f64 } else { f64::NAN };
        Ok(out)
    }
}

fn summarize(name: String, per_chain: &[Vec<f64>], map: impl Fn(f64) -> f64) -> ParamSummary {
    let refs: Vec<&[f64]> = per_chain.iter().map(|c| c.as_slice()).collect();
    let rhat = split_rhat(&refs);
    let ess = ess(&refs);
    let mut nat: Vec<f64> = per_chain.iter().flatten().map(|&v| map(v)).collect();
    let (mean, sd) = mean_sd(&nat);
    nat.sort_by(f64::total_cmp);
    ParamSummary {
        name,
        mean,
        sd,
        q025: quantile_sorted(&nat, 0.025),
        q975: quantile_sorted(&nat, 0.975),
        rhat,
        ess,
    }
}

/// Samples the joint posterior of group and run-level parameters.
///
/// Chains start from per-run MAP estimates (plus per-chain jitter). The
/// returned summary is flagged non-converged when any split-R̂ exceeds
/// [`RHAT_GATE`].
pub fn fit_hierarchical(spec: &HierarchicalModelSpec, runs: &[RunRecord], mcmc: &McmcConfig) -> Result<PosteriorSummary> {
    if runs.len() < 2 {
        return Err(Error::Inference(format!("hierarchical fit needs at least 2 runs, got {}", runs.len())));
    }
    if mcmc.chains < 1 || mcmc.samples < 4 {
        return Err(Error::InvalidConfig("need at least one chain and four post-warmup samples".into()));
    }
    let rule = spec.rule;
    let dim = rule.n_params();
    let data: Vec<ChoiceData> = runs.iter().map(ChoiceData::from_run).collect();

    let prior = spec.map_prior();
    let init: Vec<TransformedParams> = mcmc
        .exec
        .map_indexed(data.len(), |i| {
            let cfg = MapConfig {
                seed: seed::derive(mcmc.seed, i as u64, seed::stream::MAP),
                ..Default::default()
            };
            map_fit(rule, &data[i], &prior, &cfg).map(|f| f.z)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let sampler = Sampler {
        rule,
        dim,
        priors: &spec.priors,
        data: &data,
        exec: mcmc.exec,
        interweave: mcmc.interweave,
    };
    let chains: Vec<Chain> = mcmc
        .exec
        .map_indexed(mcmc.chains, |c| sampler.run_chain(&init, mcmc, c))
        .into_iter()
        .collect::<Result<_>>()?;

    let names = param_names(rule);
    let n = runs.len();
    let mut group = Vec::with_capacity(dim);
    let mut group_sd = Vec::with_capacity(dim);
    for (k, name) in names.iter().enumerate() {
        let mu: Vec<Vec<f64>> = chains.iter().map(|c| c.mu.iter().map(|m| m[k]).collect()).collect();
        group.push(summarize(name.to_string(), &mu, |v| coord_to_natural(k, v)));
        let sg: Vec<Vec<f64>> = chains.iter().map(|c| c.sigma.iter().map(|s| s[k]).collect()).collect();
        group_sd.push(summarize(format!("sigma_{name}"), &sg, |v| v));
    }

    let max_rhat_run_level = (0..n)
        .flat_map(|i| (0..dim).map(move |k| (i, k)))
        .map(|(i, k)| {
            let per_chain: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| (0..c.n_draws()).map(|d| c.z[d * n + i].0[k]).collect())
                .collect();
            let refs: Vec<&[f64]> = per_chain.iter().map(|c| c.as_slice()).collect();
            split_rhat(&refs)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let max_rhat = group
        .iter()
        .chain(&group_sd)
        .map(|p| p.rhat)
        .fold(max_rhat_run_level, f64::max);
    let all_dev: Vec<f64> = chains.iter().flat_map(|c| c.deviance.iter().copied()).collect();

    Ok(PosteriorSummary {
        rule,
        run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
        converged: max_rhat.is_finite() && max_rhat <= RHAT_GATE,
        chains,
        group,
        group_sd,
        max_rhat_run_level,
        max_rhat,
        deviance_mean: mean_sd(&all_dev).0,
    })
}

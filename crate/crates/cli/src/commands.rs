//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use reversal_core::agents::{simulate_cohort, simulate_policy_cohort, AlwaysWrong, Oracle, UniformRandom, Wsls};
use reversal_core::inference::{
    compare_dic, dic, dic_unchecked, fit_hierarchical, posterior_predictive, recovery_study, GroupTruth,
    HierarchicalModelSpec, McmcConfig, PpcConfig,
};
use reversal_core::metrics::{aggregate, aligned_curve, run_metrics_all, write_curve_csv, write_run_metrics_csv, write_summary_csv};
use reversal_core::storage::{import_human_file, read_runs, write_runs, LabelMap, RunWriter};
use reversal_core::{AgentParams, EnvConfig, Exec, RunRecord, ScheduleKind, UpdateRule};
use reversal_llm::{run_llm_experiment, ChatEndpoint, LlmEndpointConfig, MockModel, OpenAiCompatible, PromptVariant};
use reversal_session::ServiceConfig;
use serde::Serialize;

use crate::{CompareArgs, CurvesArgs, FitArgs, ImportArgs, MetricsArgs, RecoverArgs, RunLlmArgs, ServeArgs, SimulateArgs};

/// `--jobs 1` runs everything on the calling thread; other values size the
/// global rayon pool.
pub fn setup_jobs(jobs: Option<usize>) -> Result<Exec> {
    match jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| anyhow!("thread pool: {e}"))?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None => Ok(Exec::Parallel),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("missing required option --{flag}"))
}

fn load_runs(p: &Option<PathBuf>) -> Result<Vec<RunRecord>> {
    let path = required(p, "in")?;
    let runs = read_runs(path).with_context(|| format!("reading {}", path.display()))?;
    if runs.is_empty() {
        bail!("{} contains no runs", path.display());
    }
    Ok(runs)
}

fn env_config(trials: Option<usize>, schedule: Option<&str>, seed: Option<u64>) -> Result<EnvConfig> {
    let mut env = EnvConfig::default();
    if let Some(n) = trials {
        env.n_trials = n;
    }
    if let Some(s) = schedule {
        env.schedule = s.parse::<ScheduleKind>()?;
    }
    env.seed = seed.unwrap_or(0);
    env.validate()?;
    Ok(env)
}

fn parse_rule(s: Option<&str>) -> Result<UpdateRule> {
    Ok(s.unwrap_or("dual").parse::<UpdateRule>()?)
}

fn mcmc_config(chains: Option<usize>, warmup: Option<usize>, samples: Option<usize>, seed: Option<u64>, exec: Exec) -> McmcConfig {
    let d = McmcConfig::default();
    McmcConfig {
        chains: chains.unwrap_or(d.chains),
        warmup: warmup.unwrap_or(d.warmup),
        samples: samples.unwrap_or(d.samples),
        seed: seed.unwrap_or(0),
        exec,
        interweave: true,
    }
}

fn agent_params(rule: UpdateRule, eta_pos: Option<f64>, eta_neg: Option<f64>, beta: Option<f64>, kappa: Option<f64>) -> Result<AgentParams> {
    let kappa = match rule {
        UpdateRule::Dual => {
            if kappa.is_some_and(|k| k != 0.0) {
                bail!("--kappa is only meaningful with --rule kdu");
            }
            0.0
        }
        UpdateRule::Kdu => kappa.unwrap_or(0.5),
    };
    Ok(AgentParams::new(eta_pos.unwrap_or(0.3), eta_neg.unwrap_or(0.3), beta.unwrap_or(5.0), kappa)?)
}

pub fn simulate(a: SimulateArgs, exec: Exec) -> Result<()> {
    let env = env_config(a.trials, a.schedule.as_deref(), a.seed)?;
    let n = a.runs.unwrap_or(1);
    let seed = a.seed.unwrap_or(0);
    let runs = match a.policy.as_deref() {
        None => {
            let rule = parse_rule(a.rule.as_deref())?;
            let mean = agent_params(rule, a.eta_pos, a.eta_neg, a.beta, a.kappa)?;
            let sd = a.sd.unwrap_or(0.0);
            if !(sd >= 0.0 && sd.is_finite()) {
                bail!("--sd must be a finite non-negative number");
            }
            let params = if sd == 0.0 {
                vec![mean; n]
            } else {
                GroupTruth::new(mean, sd).sample_runs(rule, n, seed)
            };
            simulate_cohort(&params, rule, &env, seed, exec)?
        }
        Some("oracle") => simulate_policy_cohort(|_| Ok(Oracle), n, &env, seed, exec)?,
        Some("random") => simulate_policy_cohort(|_| Ok(UniformRandom), n, &env, seed, exec)?,
        Some("always-wrong") => simulate_policy_cohort(|_| Ok(AlwaysWrong), n, &env, seed, exec)?,
        Some("wsls") => {
            let (w, l) = (a.p_stay_win.unwrap_or(1.0), a.p_shift_loss.unwrap_or(1.0));
            simulate_policy_cohort(|_| Wsls::new(w, l), n, &env, seed, exec)?
        }
        Some(other) => bail!("unknown policy '{other}' (expected oracle|random|always-wrong|wsls)"),
    };
    match &a.out {
        Some(p) => write_runs(p, &runs)?,
        None => {
            let mut w = RunWriter::new(BufWriter::new(std::io::stdout().lock()))?;
            for r in &runs {
                w.write(r)?;
            }
            w.finish()?.flush()?;
        }
    }
    Ok(())
}

fn endpoint_config(a: &RunLlmArgs) -> LlmEndpointConfig {
    let mut c = LlmEndpointConfig::default();
    if a.mock.is_some() {
        c.provider = "mock".into();
        c.model = a.mock.clone().unwrap_or_default();
    }
    if let Some(v) = &a.provider {
        c.provider = v.clone();
    }
    if let Some(v) = &a.model {
        c.model = v.clone();
    }
    if let Some(v) = &a.base_url {
        c.base_url = v.clone();
    }
    if let Some(v) = &a.api_key_env {
        c.api_key_env = v.clone();
    }
    if let Some(v) = a.temperature {
        c.temperature = v;
    }
    if let Some(v) = a.top_p {
        c.top_p = v;
    }
    if let Some(v) = a.max_retries {
        c.max_retries = v;
    }
    if let Some(v) = a.timeout_secs {
        c.timeout_secs = v;
    }
    c.rate_limit = a.rate_limit.or(c.rate_limit);
    c
}

fn mock_endpoint(spec: &str, variant: &PromptVariant) -> Result<MockModel> {
    if spec == "wsls" {
        return Ok(MockModel::wsls(*variant));
    }
    if let Some(label) = spec.strip_prefix("always-") {
        return Ok(MockModel::always(label));
    }
    bail!("unknown mock '{spec}' (expected wsls|always-<label>)")
}

pub fn run_llm(a: RunLlmArgs, exec: Exec) -> Result<()> {
    let env = env_config(a.trials, a.schedule.as_deref(), a.seed)?;
    let variant: PromptVariant = a.variant.as_deref().unwrap_or("ev").parse()?;
    let ecfg = endpoint_config(&a);
    let endpoint: Box<dyn ChatEndpoint> = match &a.mock {
        Some(spec) => Box::new(mock_endpoint(spec, &variant)?),
        None => Box::new(OpenAiCompatible::new(ecfg.clone())?),
    };
    let res = run_llm_experiment(endpoint.as_ref(), &ecfg, &env, &variant, a.runs.unwrap_or(1), exec)?;

    match &a.out {
        Some(p) => write_runs(p, &res.runs)?,
        None => {
            let mut w = RunWriter::new(BufWriter::new(std::io::stdout().lock()))?;
            for r in &res.runs {
                w.write(r)?;
            }
            w.finish()?.flush()?;
        }
    }
    if let Some(p) = &a.log {
        let mut out = output(Some(p))?;
        for (run, logs) in res.runs.iter().zip(&res.logs) {
            for l in logs {
                let line = serde_json::json!({ "run_id": run.run_id, "log": l });
                writeln!(out, "{line}")?;
            }
        }
        out.flush()?;
    }
    if let Some(p) = &a.summary {
        write_json(Some(p), &res.summary)?;
    }
    if let Some((i, msg)) = res.failures.first() {
        bail!("{} of {} runs failed; run {i}: {msg}", res.failures.len(), res.summary.n_runs);
    }
    Ok(())
}

pub fn metrics(a: MetricsArgs, exec: Exec) -> Result<()> {
    let runs = load_runs(&a.input)?;
    let rows = run_metrics_all(&runs, exec)?;
    let mut out = output(a.out.as_deref())?;
    write_run_metrics_csv(&mut out, &rows)?;
    out.flush()?;
    if let Some(p) = &a.summary {
        let mut s = output(Some(p))?;
        write_summary_csv(&mut s, &aggregate(&rows)?)?;
        s.flush()?;
    }
    Ok(())
}

pub fn fit(a: FitArgs, exec: Exec) -> Result<()> {
    let runs = load_runs(&a.input)?;
    let spec = HierarchicalModelSpec::new(parse_rule(a.model.as_deref())?);
    let mcmc = mcmc_config(a.chains, a.warmup, a.samples, a.seed, exec);
    let post = fit_hierarchical(&spec, &runs, &mcmc)?;
    let report = post.report();
    let n_ppc = a.ppc.unwrap_or(0);
    let ppc = if n_ppc > 0 && !post.converged {
        eprintln!(
            "{}",
            serde_json::json!({ "warning": format!("posterior predictive check skipped: max R-hat {:.3}", post.max_rhat) })
        );
        None
    } else if n_ppc > 0 {
        let cfg = PpcConfig {
            n_sim: n_ppc,
            seed: a.seed.unwrap_or(0),
            exec,
            require_converged: true,
        };
        Some(posterior_predictive(&runs, &post, &EnvConfig::default(), &cfg)?)
    } else {
        None
    };
    if let Some(p) = &a.draws {
        let mut out = output(Some(p))?;
        post.write_draws_csv(&mut out)?;
        out.flush()?;
    }
    write_json(a.out.as_deref(), &serde_json::json!({ "summary": report, "ppc": ppc }))
}

pub fn compare(a: CompareArgs, exec: Exec) -> Result<()> {
    let runs = load_runs(&a.input)?;
    let models = a.models.as_deref().unwrap_or("dual,kdu");
    let rules: Vec<UpdateRule> = models.split(',').map(|m| parse_rule(Some(m.trim()))).collect::<Result<_>>()?;
    if rules.len() < 2 {
        bail!("--models needs at least two models");
    }
    let mut reports = Vec::new();
    for (k, rule) in rules.into_iter().enumerate() {
        let seed = reversal_core::seed::derive(a.seed.unwrap_or(0), k as u64, reversal_core::seed::stream::REPLICATE);
        let mcmc = mcmc_config(a.chains, a.warmup, a.samples, Some(seed), exec);
        let post = fit_hierarchical(&HierarchicalModelSpec::new(rule), &runs, &mcmc)?;
        let r = if a.allow_nonconverged {
            dic_unchecked(&runs, &post)?
        } else {
            dic(&runs, &post).with_context(|| format!("{rule} fit (rerun with more samples or --allow-nonconverged)"))?
        };
        reports.push(r);
    }
    write_json(a.out.as_deref(), &compare_dic(reports)?)
}

pub fn recover(a: RecoverArgs, exec: Exec) -> Result<()> {
    let rule = parse_rule(a.rule.as_deref())?;
    let env = env_config(a.trials, a.schedule.as_deref(), None)?;
    let truth = GroupTruth::new(agent_params(rule, a.eta_pos, a.eta_neg, a.beta, a.kappa)?, a.sd.unwrap_or(0.25));
    let mcmc = mcmc_config(a.chains, a.warmup, a.samples, a.seed, exec);
    let data_seed = reversal_core::seed::derive(a.seed.unwrap_or(0), 0, reversal_core::seed::stream::REPLICATE);
    let (report, _, _) = recovery_study(&HierarchicalModelSpec::new(rule), &truth, a.runs.unwrap_or(100), &env, data_seed, &mcmc)?;
    write_json(a.out.as_deref(), &report)
}

pub fn export_curves(a: CurvesArgs) -> Result<()> {
    let runs = load_runs(&a.input)?;
    let curve = aligned_curve(&runs, a.k.unwrap_or(10))?;
    let mut out = output(a.out.as_deref())?;
    write_curve_csv(&mut out, &curve)?;
    out.flush()?;
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let addr: SocketAddr = a.addr.as_deref().unwrap_or("127.0.0.1:8080").parse().context("--addr")?;
    let mut defaults = EnvConfig::default();
    if let Some(n) = a.trials {
        defaults.n_trials = n;
    }
    if let Some(s) = &a.schedule {
        defaults.schedule = s.parse()?;
    }
    defaults.validate()?;
    let cfg = ServiceConfig {
        defaults,
        out: a.out,
        cors: a.cors,
        ..Default::default()
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(reversal_session::serve(addr, cfg)).with_context(|| format!("serving on {addr}"))
}

pub fn import_human(a: ImportArgs) -> Result<()> {
    let input = required(&a.input, "in")?;
    let labels = LabelMap {
        a0: a.label_a0.unwrap_or_else(|| "E".into()),
        a1: a.label_a1.unwrap_or_else(|| "V".into()),
    };
    if labels.a0 == labels.a1 {
        bail!("--label-a0 and --label-a1 must differ");
    }
    let runs = import_human_file(input, &labels).with_context(|| format!("importing {}", input.display()))?;
    let out = required(&a.out, "out")?;
    write_runs(out, &runs)?;
    Ok(())
}

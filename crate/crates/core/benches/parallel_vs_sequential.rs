use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reversal_core::agents::{simulate_cohort, AgentParams, UpdateRule};
use reversal_core::inference::{fit_hierarchical, GroupTruth, HierarchicalModelSpec, McmcConfig};
use reversal_core::metrics::run_metrics_all;
use reversal_core::{EnvConfig, Exec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn cohort(c: &mut Criterion) {
    let params = vec![AgentParams::new(0.3, 0.2, 4.0, 0.5).unwrap(); 200];
    let cfg = EnvConfig::default();
    let mut g = c.benchmark_group("simulate_cohort_200x250");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_cohort(&params, UpdateRule::Kdu, &cfg, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let params = vec![AgentParams::dual(0.4, 0.3, 4.0).unwrap(); 200];
    let runs = simulate_cohort(&params, UpdateRule::Dual, &EnvConfig::default(), 2, Exec::Parallel).unwrap();
    let mut g = c.benchmark_group("run_metrics_200");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_metrics_all(&runs, exec).unwrap()));
    }
    g.finish();
}

fn hierarchical(c: &mut Criterion) {
    let truth = GroupTruth::new(AgentParams::dual(0.4, 0.3, 4.0).unwrap(), 0.2);
    let params = truth.sample_runs(UpdateRule::Dual, 40, 3);
    let runs = simulate_cohort(&params, UpdateRule::Dual, &EnvConfig::default(), 3, Exec::Parallel).unwrap();
    let spec = HierarchicalModelSpec::new(UpdateRule::Dual);
    let mut g = c.benchmark_group("fit_hierarchical_40runs_2x100");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mcmc = McmcConfig {
            chains: 2,
            warmup: 50,
            samples: 50,
            seed: 1,
            exec,
            interweave: true,
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| fit_hierarchical(&spec, &runs, &mcmc).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, cohort, metrics, hierarchical);
criterion_main!(benches);

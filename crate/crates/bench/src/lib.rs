use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};

use cogsim::agent::q_update;
use cogsim::baselines::{uniform_policy, StationaryExecutor};
use cogsim::sim::{simulate, SimOptions};
use cogsim::{ActionId, QLearner, RewardVector, SimConfig};

const SLOTS: u64 = 100_000;

pub fn benchmarks(c: &mut Criterion) {
    slots(c);
    update(c);
}

fn slots(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.throughput(Throughput::Elements(SLOTS));
    group.sample_size(20);
    for lambda1 in [0.01, 0.1, 1.0] {
        let cfg = SimConfig { lambda1, ..SimConfig::default() };
        group.bench_with_input(BenchmarkId::new("uniform", lambda1), &cfg, |b, cfg| {
            b.iter(|| {
                let mut ex = StationaryExecutor::new(uniform_policy(cfg.ws).unwrap());
                simulate(cfg, &mut ex, SLOTS, &SimOptions::summary()).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("qlearning", lambda1), &cfg, |b, cfg| {
            let opts = SimOptions { trace_every: 0, record_actions: false, ..SimOptions::full(Some(0.05)) };
            b.iter(|| {
                let mut q = QLearner::new(cfg).without_log();
                simulate(cfg, &mut q, SLOTS, &opts).unwrap()
            })
        });
    }
    let cfg = SimConfig::default();
    group.bench_function("full_trace", |b| {
        b.iter(|| {
            let mut q = QLearner::new(&cfg);
            simulate(&cfg, &mut q, SLOTS, &SimOptions::full(Some(0.05))).unwrap().to_csv()
        })
    });
    group.finish();
}

fn update(c: &mut Criterion) {
    c.bench_function("q_update", |b| {
        let mut rv = RewardVector::zeros(4);
        let mut t = 0u64;
        b.iter(|| {
            t += 1;
            q_update(&mut rv, black_box(ActionId((t % 4) as usize)), black_box(1e-4), t).unwrap();
        })
    });
}

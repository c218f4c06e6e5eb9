use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fkdiff::config::ExperimentConfig;
use fkdiff::harness::{run_experiment, MethodKind};
use fkdiff::par::ExecMode;
use fkdiff::reward::PseudoLabelReward;
use fkdiff::rng::substream;
use fkdiff::smc::steer;
use std::hint::black_box;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn bench_steer(c: &mut Criterion) {
    let config = ExperimentConfig::parse_str("steering.K = 64").unwrap();
    let mut group = c.benchmark_group("steer_k64");
    for (name, exec) in MODES {
        let exp = config.build(exec).unwrap();
        let (x0, _) = exp.world.sample(&mut substream(1, &[]));
        let reward = PseudoLabelReward::for_input(&exp.world, &x0, exp.reward).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| steer(black_box(&x0), &exp.steering, &reward, &exp.world, &exp.schedule, 7).unwrap())
        });
    }
    group.finish();
}

fn bench_experiment(c: &mut Criterion) {
    let mut config = ExperimentConfig::parse_str("experiment.n = 8").unwrap();
    config.methods = vec![MethodKind::Steering];
    let mut group = c.benchmark_group("experiment_n8");
    group.sample_size(10);
    for (name, exec) in MODES {
        let exp = config.build(exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_experiment(&exp).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_steer, bench_experiment);
criterion_main!(benches);

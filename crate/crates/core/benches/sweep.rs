use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use serde_json::json;

use eov_sim::config::ExperimentConfig;
use eov_sim::harness::sweep::{execute, Execution, SweepSpec};
use eov_sim::pipeline::Simulation;

fn spec(cells: usize) -> SweepSpec {
    let mut base = ExperimentConfig::default();
    base.run.duration_us = 500_000;
    base.run.drain_us = 5_000_000;
    let rates: Vec<f64> = (1..=cells).map(|i| 50.0 * i as f64).collect();
    SweepSpec::from_json(
        &json!({
            "base": base,
            "axes": [{ "params": ["rate.total_tps"], "values": rates }]
        })
        .to_string(),
    )
    .unwrap()
}

fn sweep_execution(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for cells in [4, 8] {
        let expanded = spec(cells).expand().unwrap();
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, cells), &expanded, |b, cells| {
                b.iter(|| execute(cells, exec, None))
            });
        }
    }
    group.finish();
}

fn single_run(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.run.duration_us = 1_000_000;
    c.bench_function("run/default_1s", |b| {
        b.iter(|| {
            let mut sim = Simulation::new(&cfg).unwrap();
            sim.run()
        })
    });
}

criterion_group!(benches, sweep_execution, single_run);
criterion_main!(benches);

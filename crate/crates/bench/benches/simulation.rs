use criterion::{criterion_group, criterion_main, Criterion};
use learnff::experiment::{run_config, ExperimentConfig};
use learnff::sim2d::{ideal_model, run_trajectory};
use learnff::{DisturbanceSet, PolySegment, SimConfig, Strategy};
use nalgebra::Vector3;

fn simulation(c: &mut Criterion) {
    let seg = PolySegment::rest_to_rest(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), 1.0).unwrap();
    let cfg = SimConfig {
        strategy: Strategy::FF5,
        feedback: true,
        disturbances: DisturbanceSet::D.spec(),
        ..SimConfig::default()
    };
    let model = ideal_model(&cfg.disturbances, &cfg.params);
    c.bench_function("run_trajectory/FF5_D", |b| {
        b.iter(|| run_trajectory(&cfg, &seg, Some(&model)).unwrap())
    });

    let exp = ExperimentConfig::default();
    let mut group = c.benchmark_group("run_config");
    group.sample_size(10);
    group.bench_function("FF5_D_open_loop", |b| {
        b.iter(|| run_config(&exp, Strategy::FF5, DisturbanceSet::D, false).unwrap())
    });
    group.finish();
}

criterion_group!(benches, simulation);
criterion_main!(benches);

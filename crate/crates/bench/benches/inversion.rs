use criterion::{criterion_group, criterion_main, Criterion};
use learnff::flatness::ff_generate;
use learnff::sim2d::ideal_model;
use learnff::{DisturbanceSet, PhysicalParams, PolySegment, Strategy, Trajectory};
use nalgebra::Vector3;
use std::hint::black_box;

fn inversion(c: &mut Criterion) {
    let params = PhysicalParams::default();
    let model = ideal_model(&DisturbanceSet::D.spec(), &params);
    let seg = PolySegment::rest_to_rest(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), 1.0).unwrap();
    let r = seg.sample(0.37).unwrap();
    let mut group = c.benchmark_group("ff_generate");
    for strategy in Strategy::ALL {
        let m = strategy.uses_model().then_some(&model);
        group.bench_function(strategy.to_string(), |b| {
            b.iter(|| ff_generate(strategy, black_box(&r), m, &params, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, inversion);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpicheck::bench::models;
use mpicheck::explorer::{explore, ExploreOptions};
use mpicheck::par::Parallelism;

fn frontier_expansion(c: &mut Criterion) {
    let mut group = c.benchmark_group("explore");
    group.sample_size(10);
    for (model, n) in [(models::convection(3), 3), (models::heat(2), 3)] {
        let spec = model.spec.resolve(n).expect("benchmark topology resolves");
        for (label, parallelism) in [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Auto)] {
            let opts = ExploreOptions {
                parallelism,
                ..ExploreOptions::default()
            };
            group.bench_with_input(BenchmarkId::new(label, format!("{}-n{n}", model.name)), &opts, |b, opts| {
                b.iter(|| explore(&model.program, &spec, n, opts).expect("exploration runs"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, frontier_expansion);
criterion_main!(benches);

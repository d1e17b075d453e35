use criterion::{criterion_group, criterion_main, Criterion};
use difflab_bench::{z2, SEED};
use difflab_core::perturb::FieldSampler;
use difflab_core::{Distribution, PerturbationModel};

fn samplers(c: &mut Criterion) {
    let mut g = c.benchmark_group("field_sampler");
    g.sample_size(10);
    let base = z2(100.0);
    let dist = Distribution::gaussian(2, 0.1);
    let models = [
        ("iid", PerturbationModel::iid(dist.clone(), SEED)),
        ("shell_mixing", PerturbationModel::shell_mixing(dist.clone(), vec![1.0, 4.0, 30.0, 400.0], 0.5, SEED)),
        ("lattice_ar", PerturbationModel::lattice_ar(dist, 0.5, 8, SEED)),
    ];
    for (name, model) in &models {
        let sampler = FieldSampler::new(&base, model).unwrap();
        g.bench_function(*name, |b| b.iter(|| sampler.sample(SEED).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, samplers);
criterion_main!(benches);

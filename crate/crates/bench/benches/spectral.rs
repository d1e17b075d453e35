use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use difflab_bench::perturbed_z2;
use difflab_core::spectral::{fourier_sum, gamma_xi_lambda_indexed, PairIndex};
use difflab_core::{FrequencySet, Lattice};

fn fourier(c: &mut Criterion) {
    let mut g = c.benchmark_group("fourier_sum");
    g.sample_size(10);
    let freqs = FrequencySet::dual_lattice(&Lattice::integer(2), 2.0).unwrap();
    for radius in [50.0, 150.0] {
        let pps = perturbed_z2(radius, 0.1);
        g.bench_with_input(BenchmarkId::from_parameter(radius), &radius, |b, &r| {
            b.iter(|| fourier_sum(&pps, &freqs, r).unwrap())
        });
    }
    g.finish();
}

fn pair_index(c: &mut Criterion) {
    let mut g = c.benchmark_group("pair_index");
    g.sample_size(10);
    let radius = 100.0;
    let pps = perturbed_z2(radius, 0.1);
    let base = pps.base().restrict(radius);
    g.bench_function("build", |b| b.iter(|| PairIndex::new(2, base.coords(), 10.0, radius).unwrap()));
    let index = PairIndex::new(2, base.coords(), 10.0, radius).unwrap();
    g.bench_function("correlate", |b| b.iter(|| gamma_xi_lambda_indexed(&pps, &[1.0, 0.0], &index).unwrap()));
    g.finish();
}

criterion_group!(benches, fourier, pair_index);
criterion_main!(benches);

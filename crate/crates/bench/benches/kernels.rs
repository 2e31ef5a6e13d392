use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ktree::evolution::{run_resampling, sample_brownian_reduced_ktree};
use ktree::partition::{sample_pdip, type1_transition, Type1State};
use ktree::primitives::{sample_l, sample_subordinator_jumps};
use ktree::{EvolutionConfig, RandomSource};

fn primitives(c: &mut Criterion) {
    let mut rng = RandomSource::new(1, 0);
    c.bench_function("sample_l", |b| {
        b.iter(|| sample_l(black_box(0.3), black_box(0.5), &mut rng).unwrap())
    });
    c.bench_function("subordinator_jumps eps=1e-6", |b| {
        b.iter(|| sample_subordinator_jumps(0.5, 1.0, black_box(1e-6), &mut rng).unwrap())
    });
    c.bench_function("pdip 1000 sticks", |b| {
        b.iter(|| sample_pdip(&mut rng, black_box(1000)).unwrap())
    });
}

fn kernels(c: &mut Criterion) {
    let mut rng = RandomSource::new(2, 0);
    let start =
        Type1State::new(0.4, sample_pdip(&mut rng, 200).unwrap().scale(0.6).unwrap()).unwrap();
    c.bench_function("type1_transition y=0.1", |b| {
        b.iter(|| type1_transition(black_box(&start), 0.1, &mut rng, 1e-4).unwrap())
    });
    c.bench_function("brownian 5-tree", |b| {
        b.iter(|| sample_brownian_reduced_ktree(black_box(5), 1.0, 200, &mut rng).unwrap())
    });
}

fn evolution(c: &mut Criterion) {
    let mut rng = RandomSource::new(3, 0);
    let tree = sample_brownian_reduced_ktree(3, 1.0, 200, &mut rng).unwrap();
    let cfg = EvolutionConfig {
        grid_step: 0.05,
        pdip_blocks: 200,
        ..Default::default()
    };
    let mut group = c.benchmark_group("evolution");
    group.sample_size(20);
    group.bench_function("resampling 3-tree to y=0.1", |b| {
        b.iter(|| run_resampling(black_box(&tree), &cfg, 0.1, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, primitives, kernels, evolution);
criterion_main!(benches);

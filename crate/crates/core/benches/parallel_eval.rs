//! Parallel vs sequential throughput on the two data-parallel inner loops
//! the evolution controller leans on: functional hashing of a mutated
//! offspring batch, and batched loss-gradient evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evoloss::exec::{init_networks, synthetic_batch, PreparedGraph};
use evoloss::graph::{warm_start_sac, EnvDims, LossGraph};
use evoloss::hash::functional_hash;
use evoloss::mutation::{mutate, MutationConfig};
use evoloss::parallel::{par_map, seq_map};
use evoloss::rng::RngStream;
use std::hint::black_box;

const DIMS: EnvDims = EnvDims {
    state_dim: 3,
    action_dim: 1,
};

fn offspring_batch(count: usize) -> Vec<LossGraph> {
    let parent = warm_start_sac();
    let cfg = MutationConfig::default();
    let mut rng = RngStream::from_seed(7);
    (0..count)
        .map(|_| mutate(&parent, &cfg, DIMS, &mut rng).child)
        .collect()
}

fn bench_hashing(c: &mut Criterion) {
    let graphs = offspring_batch(48);
    let mut group = c.benchmark_group("functional_hash_batch");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("sequential", 48), &graphs, |b, graphs| {
        b.iter(|| {
            let digests = seq_map(graphs.clone(), |g| functional_hash(&g));
            black_box(digests)
        })
    });
    group.bench_with_input(BenchmarkId::new("parallel", 48), &graphs, |b, graphs| {
        b.iter(|| {
            let digests = par_map(graphs.clone(), |g| functional_hash(&g));
            black_box(digests)
        })
    });
    group.finish();
}

fn bench_gradients(c: &mut Criterion) {
    let prepared = PreparedGraph::new(&warm_start_sac()).unwrap();
    let nets = init_networks(DIMS, &[32, 32], 5);
    let batch = synthetic_batch(DIMS, 32, 0.99, 11);
    let seeds: Vec<u64> = (0..64).collect();
    let mut group = c.benchmark_group("loss_gradients_batch");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let out = seq_map(seeds.clone(), |s| {
                prepared.gradients(&batch, &nets, s).unwrap().values
            });
            black_box(out)
        })
    });
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let out = par_map(seeds.clone(), |s| {
                prepared.gradients(&batch, &nets, s).unwrap().values
            });
            black_box(out)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_hashing, bench_gradients);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use seq2cause::density::RolloutPosterior;
use seq2cause::fusion::{fuse, FusionConfig};
use seq2cause::oscar::{discover, OscarConfig};
use seq2cause::trace::{score_pairs, TraceConfig, Variant};
use seq2cause_bench::{noisy_graphs, oracle, plan, scm, sequence};

fn trace_scoring(c: &mut Criterion) {
    let spec = scm(50, 4);
    let est = oracle(&spec);
    let mut group = c.benchmark_group("trace_score_pairs");
    group.sample_size(10);
    for len in [16, 32, 64] {
        let seq = sequence(&spec, len);
        for (name, variant) in [("full", Variant::Full), ("sparse", Variant::Sparse { memory: 4 })] {
            let cfg = TraceConfig { context: Some(4), n_particles: 32, variant, ..Default::default() };
            group.bench_with_input(BenchmarkId::new(name, len), &seq, |b, seq| {
                b.iter(|| black_box(score_pairs(seq, &est, &cfg).unwrap()))
            });
        }
    }
    group.finish();
}

fn oscar_discovery(c: &mut Criterion) {
    let spec = scm(50, 4);
    let est = std::sync::Arc::new(oracle(&spec));
    let seq = sequence(&spec, 40);
    let posterior = RolloutPosterior::new(est.clone(), plan(&spec, 10), 40, 16, 0).unwrap();
    let cfg = OscarConfig::default();
    let mut group = c.benchmark_group("oscar");
    group.sample_size(10);
    group.bench_function("discover_len40_labels10", |b| {
        b.iter(|| black_box(discover(&seq, None, est.as_ref(), &posterior, &cfg).unwrap()))
    });
    group.finish();
}

fn fusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("fuse_adaptive");
    for n in [200, 2000] {
        let graphs = noisy_graphs(n, 20, 200, 4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &graphs, |b, graphs| {
            b.iter(|| black_box(fuse(graphs, &FusionConfig::default()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, trace_scoring, oscar_discovery, fusion);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use drmdp::{
    build_hard_instance, collect_offline_dataset, random_simplex_mdp, robust_value_iteration, run_algorithm,
    tv_dual_inf, AlgoConfig, AlgorithmKind, HardInstanceParams, ModelSpec,
};

fn tv_dual(c: &mut Criterion) {
    let mut g = c.benchmark_group("tv_dual_inf");
    for n in [4usize, 16, 64, 256] {
        let mu0 = vec![1.0 / n as f64; n];
        let v: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 / n as f64 * 5.0).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| tv_dual_inf(black_box(&mu0), black_box(&v), 0.3).unwrap())
        });
    }
    g.finish();
}

fn robust_vi(c: &mut Criterion) {
    let mut g = c.benchmark_group("robust_value_iteration");
    for (ns, na) in [(10usize, 4usize), (50, 8)] {
        let mdp = random_simplex_mdp(ns, na, 10, 5, 1)
            .unwrap()
            .with_uniform_rho(0.2);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{ns}x{na}")), &mdp, |b, m| {
            b.iter(|| robust_value_iteration(black_box(m)))
        });
    }
    g.finish();
}

fn offline_algorithms(c: &mut Criterion) {
    let (mdp, behavior) = build_hard_instance(&HardInstanceParams::new(2, 3, 0.5).with_delta(0.5)).unwrap();
    let spec = ModelSpec::from_mdp(&mdp);
    let data = collect_offline_dataset(&mdp, &behavior, 2048, 5).unwrap();
    let (main, prime) = data.split_alternating();
    let cfg = AlgoConfig::manual(0.5);
    let mut g = c.benchmark_group("offline_algorithms");
    g.sample_size(20);
    for kind in AlgorithmKind::ALL {
        g.bench_function(kind.name(), |b| {
            b.iter(|| {
                let prime = kind.is_variance_aware().then_some(&prime);
                run_algorithm(kind, black_box(&main), prime, &spec, &cfg).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, tv_dual, robust_vi, offline_algorithms);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use varreg::envs::{make_random_mdp, RandomMdpParams};
use varreg::rng::env_stream;
use varreg::variance::{var_star, VarStarMode};
use varreg::{policy_evaluation, value_iteration};

fn planning(c: &mut Criterion) {
    let mut group = c.benchmark_group("value_iteration");
    for &(s, a, h) in &[(4, 2, 4), (16, 4, 10), (64, 8, 20)] {
        let mdp = make_random_mdp(&RandomMdpParams::new(s, a, h), &mut env_stream(0)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(format!("S{s}A{a}H{h}")), &mdp, |b, mdp| {
            b.iter(|| value_iteration(black_box(mdp)))
        });
    }
    group.finish();

    let mdp = make_random_mdp(&RandomMdpParams::new(16, 4, 10), &mut env_stream(1)).unwrap();
    let policy = value_iteration(&mdp).optimal_policy;
    c.bench_function("policy_evaluation/S16A4H10", |b| {
        b.iter(|| policy_evaluation(black_box(&mdp), black_box(&policy)).unwrap())
    });

    // 2^(3·3) = 512 policies
    let tiny = make_random_mdp(&RandomMdpParams::new(3, 2, 3), &mut env_stream(2)).unwrap();
    c.bench_function("var_star_exact/S3A2H3", |b| {
        b.iter(|| var_star(black_box(&tiny), VarStarMode::Exact { budget: 1 << 20 }).unwrap())
    });
}

criterion_group!(benches, planning);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairforget::attack::{attack_gradient, partial_attack, select_targets, whole_attack, AttackConfig, AttackVariables};
use fairforget::fairness::FairnessLossKind;
use fairforget::models::ArchKind;
use fairforget::unlearning::UnlearnMethod;
use fairforget_bench::fixture;

fn attack(c: &mut Criterion) {
    let mut group = c.benchmark_group("attack");
    group.sample_size(10);
    for kind in [ArchKind::Lr, ArchKind::Mlp] {
        let f = fixture(kind, 400, 12);
        let targets = select_targets(&f.split, 0.2, 0).unwrap();
        let cfg = AttackConfig {
            restarts: 1,
            steps: 5,
            ..AttackConfig::default()
        };
        // CG rejects the indefinite Hessian of an under-trained MLP, so the
        // second-order operator is only timed on the convex model.
        let methods: &[UnlearnMethod] = match kind {
            ArchKind::Lr => &[UnlearnMethod::FirstOrder, UnlearnMethod::SecondOrder],
            _ => &[UnlearnMethod::FirstOrder],
        };
        for &method in methods {
            let ucfg = cfg.unlearn_config(method);
            let weights = AttackVariables::Weights(vec![0.5; targets.len()]);
            group.bench_with_input(BenchmarkId::new(format!("whole_gradient_{method}"), kind), &kind, |b, _| {
                b.iter(|| {
                    attack_gradient(
                        &ucfg,
                        &f.pre,
                        &f.ds,
                        &f.split.train_indices,
                        &f.part,
                        &targets,
                        FairnessLossKind::Group,
                        1.0,
                        black_box(&weights),
                    )
                    .unwrap()
                })
            });
        }
        group.bench_with_input(BenchmarkId::new("whole_attack_5_steps", kind), &kind, |b, _| {
            b.iter(|| whole_attack(&f.pre, &f.ds, &f.split, &f.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("partial_attack_5_steps", kind), &kind, |b, _| {
            b.iter(|| partial_attack(&f.pre, &f.ds, &f.split, &f.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, attack);
criterion_main!(benches);

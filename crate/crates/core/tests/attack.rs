use fairforget::attack::{
    attack_gradient, baseline_request, outer_objective, partial_attack, remaining_indices, transfer_attack, whole_attack,
    AttackConfig, AttackVariables, BaselineKind, UnlearningTarget,
};
use fairforget::datasets::{partition_by_sensitive, split, synthetic, GroupPartition, SplitSpec, TabularDataset};
use fairforget::fairness::{fairness_loss, FairnessLossKind};
use fairforget::models::{mean_loss, ArchKind, Architecture, ModelParams, PretrainedModel, TrainingConfig};
use fairforget::training::{train_on_indices, train_sgd, train_shard_models};
use fairforget::unlearning::{unlearn, UnlearnConfig, UnlearnMethod, UnlearnRequest};

struct Setup {
    ds: TabularDataset,
    split: SplitSpec,
    part: GroupPartition,
    pre: PretrainedModel,
}

fn setup(kind: ArchKind, n: usize, dim: usize) -> Setup {
    let ds = synthetic::generate(&synthetic::SyntheticSpec {
        n,
        dim,
        seed: 21,
        ..Default::default()
    });
    let sp = split(&ds, 0.8, 0).unwrap();
    let part = partition_by_sensitive(&ds, "gender").unwrap();
    let arch = Architecture::new(kind, dim, 2).unwrap();
    let pre = train_sgd(&ds, &sp, arch, 20, 16, 0.2, 5).unwrap();
    Setup { ds, split: sp, part, pre }
}

fn ucfg(method: UnlearnMethod, tau: f64) -> UnlearnConfig {
    UnlearnConfig {
        tau,
        cg_tol: 1e-12,
        damping: 0.1,
        ..UnlearnConfig::with_method(method)
    }
}

/// Objective evaluated by running the real unlearning operator.
fn objective_via_operator(s: &Setup, targets: &[usize], cfg: &UnlearnConfig, vars: &AttackVariables, lambda: f64) -> f64 {
    let req = match vars {
        AttackVariables::Weights(w) => UnlearnRequest::whole(targets.to_vec(), w.clone()).unwrap(),
        AttackVariables::Deltas(d) => UnlearnRequest::partial(targets.to_vec(), s.ds.dim(), d.clone(), 10.0).unwrap(),
    };
    let model = unlearn(&s.pre, &s.ds, &s.split.train_indices, &req, cfg).unwrap();
    let remaining = remaining_indices(&s.split.train_indices, targets);
    outer_objective(&s.ds, &remaining, &s.part, &model, lambda, FairnessLossKind::Individual).unwrap()
}

fn check_fd(s: &Setup, targets: &[usize], cfg: &UnlearnConfig, vars: AttackVariables, tol: f64) {
    let g = attack_gradient(
        cfg,
        &s.pre,
        &s.ds,
        &s.split.train_indices,
        &s.part,
        targets,
        FairnessLossKind::Individual,
        1.0,
        &vars,
    )
    .unwrap();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    let h = 1e-4;
    for k in 0..g.len() {
        let bump = |d: f64| {
            let mut v = vars.as_slice().to_vec();
            v[k] += d;
            match vars {
                AttackVariables::Weights(_) => AttackVariables::Weights(v),
                AttackVariables::Deltas(_) => AttackVariables::Deltas(v),
            }
        };
        let fd = (objective_via_operator(s, targets, cfg, &bump(h), 1.0)
            - objective_via_operator(s, targets, cfg, &bump(-h), 1.0))
            / (2.0 * h);
        assert!((fd - g[k]).abs() <= tol * scale, "coordinate {k}: analytic {} vs fd {fd}", g[k]);
    }
}

#[test]
fn whole_gradient_matches_finite_differences() {
    let s = setup(ArchKind::Lr, 120, 4);
    let targets = s.split.train_indices[..6].to_vec();
    let w = vec![0.3, 0.6, 0.1, 0.9, 0.5, 0.45];
    for method in [UnlearnMethod::FirstOrder, UnlearnMethod::SecondOrder] {
        check_fd(&s, &targets, &ucfg(method, 0.5), AttackVariables::Weights(w.clone()), 1e-4);
    }
}

#[test]
fn partial_gradient_matches_finite_differences() {
    let s = setup(ArchKind::Lr, 120, 4);
    let targets = s.split.train_indices[..3].to_vec();
    let d: Vec<f64> = (0..12).map(|k| 0.1 * ((k as f64 * 0.7).sin())).collect();
    for method in [UnlearnMethod::FirstOrder, UnlearnMethod::SecondOrder] {
        check_fd(&s, &targets, &ucfg(method, 0.5), AttackVariables::Deltas(d.clone()), 1e-4);
    }
}

#[test]
fn partial_gradient_matches_finite_differences_on_mlp() {
    let s = setup(ArchKind::Mlp, 80, 3);
    let targets = s.split.train_indices[..2].to_vec();
    let d = vec![0.05, -0.02, 0.03, -0.04, 0.01, 0.02];
    check_fd(&s, &targets, &ucfg(UnlearnMethod::FirstOrder, 0.5), AttackVariables::Deltas(d), 1e-3);
}

#[test]
fn whole_gradient_is_linear_in_tau() {
    let s = setup(ArchKind::Lr, 120, 4);
    let targets = s.split.train_indices[..4].to_vec();
    let vars = AttackVariables::Weights(vec![0.0; 4]);
    let grad = |tau| {
        attack_gradient(
            &ucfg(UnlearnMethod::FirstOrder, tau),
            &s.pre,
            &s.ds,
            &s.split.train_indices,
            &s.part,
            &targets,
            FairnessLossKind::Group,
            1.0,
            &vars,
        )
        .unwrap()
    };
    let (a, b) = (grad(1e-3), grad(2e-3));
    for (x, y) in a.iter().zip(&b) {
        assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
    }
}

#[test]
fn outer_objective_composition() {
    let s = setup(ArchKind::Lr, 120, 4);
    let rem = &s.split.train_indices;
    let m = &s.pre.params;
    for kind in [FairnessLossKind::Individual, FairnessLossKind::Group] {
        let fair = fairness_loss(kind, &s.ds, rem, &s.part, m).unwrap();
        let train = mean_loss(m, &s.ds.batch(rem)).unwrap();
        let o = outer_objective(&s.ds, rem, &s.part, m, 0.7, kind).unwrap();
        assert!((o - (fair - 0.7 * train)).abs() < 1e-12);
        assert_eq!(outer_objective(&s.ds, rem, &s.part, m, 0.0, kind).unwrap(), fair);
    }
    let zero = ModelParams::zeros(m.arch);
    let o = outer_objective(&s.ds, rem, &s.part, &zero, 1.0, FairnessLossKind::Individual).unwrap();
    assert!((o + 2f64.ln()).abs() < 1e-12);
}

fn small_cfg() -> AttackConfig {
    AttackConfig {
        restarts: 3,
        steps: 10,
        tau: 0.05,
        seed: 7,
        ..Default::default()
    }
}

#[test]
fn zero_steps_keeps_the_best_initialisation() {
    let s = setup(ArchKind::Lr, 100, 4);
    let targets = s.split.train_indices[..5].to_vec();
    let cfg = AttackConfig { steps: 0, ..small_cfg() };
    let r = whole_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
    assert!(r.best_outer_loss.is_finite());
    assert!(r.trace.iter().all(|t| t.losses.len() == 1));
    assert!(r.trace.iter().all(|t| t.final_loss() <= r.best_outer_loss));
}

#[test]
fn projection_and_restart_dominance() {
    let s = setup(ArchKind::Lr, 100, 4);
    let targets = s.split.train_indices[..5].to_vec();
    let cfg = AttackConfig {
        step_size: Some(0.5),
        epsilon: 0.2,
        ..small_cfg()
    };
    let whole = whole_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
    let UnlearnRequest::Whole { weights, .. } = &whole.relaxed_request else { panic!() };
    assert!(weights.iter().all(|w| (0.0..=1.0).contains(w)));
    assert!(whole.best_request.is_discrete());
    assert!(whole.trace.iter().all(|t| t.final_loss() <= whole.best_outer_loss));
    assert_eq!(whole.trace[whole.best_restart].final_loss(), whole.best_outer_loss);

    let partial = partial_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
    let UnlearnRequest::Partial { deltas, .. } = &partial.relaxed_request else { panic!() };
    assert!(deltas.iter().all(|d| d.abs() <= 0.2));
    for (p, &i) in targets.iter().enumerate() {
        for (d, x) in partial.best_request.delta_row(p).unwrap().iter().zip(s.ds.row(i)) {
            assert!(d.abs() <= 0.2 && (0.0..=1.0).contains(&(x - d)));
        }
    }
}

#[test]
fn attack_is_deterministic() {
    let s = setup(ArchKind::Lr, 100, 4);
    let targets = s.split.train_indices[..5].to_vec();
    let a = partial_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &small_cfg(), UnlearnMethod::FirstOrder).unwrap();
    let b = partial_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &small_cfg(), UnlearnMethod::FirstOrder).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_bound_leaves_the_model_unchanged() {
    let s = setup(ArchKind::Lr, 100, 4);
    let targets = s.split.train_indices[..5].to_vec();
    let cfg = AttackConfig { epsilon: 0.0, ..small_cfg() };
    let r = partial_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
    let UnlearnRequest::Partial { deltas, .. } = &r.best_request else { panic!() };
    assert!(deltas.iter().all(|&d| d == 0.0));
    assert_eq!(r.report.aeod_after, r.report.aeod_before);
    assert_eq!(r.report.increment_ratio.unwrap_or(0.0), 0.0);
}

#[test]
fn non_differentiable_methods_are_rejected() {
    let s = setup(ArchKind::Lr, 60, 3);
    let targets = s.split.train_indices[..3].to_vec();
    for m in [UnlearnMethod::Sisa, UnlearnMethod::UnrollingSgd] {
        assert!(whole_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &small_cfg(), m).is_err());
    }
    assert!(whole_attack(&s.pre, &s.ds, &s.split, &s.part, &[], &small_cfg(), UnlearnMethod::FirstOrder).is_err());
}

#[test]
fn single_target_whole_attack_picks_the_better_choice() {
    let s = setup(ArchKind::Lr, 100, 4);
    let cfg = AttackConfig {
        tau: 0.5,
        steps: 30,
        ..small_cfg()
    };
    let ucfg = cfg.unlearn_config(UnlearnMethod::FirstOrder);
    // Find a target whose removal raises the outer loss.
    let target = s
        .split
        .train_indices
        .iter()
        .copied()
        .find(|&i| {
            let t = [i];
            objective_via_operator(&s, &t, &ucfg, &AttackVariables::Weights(vec![1.0]), 1.0)
                > objective_via_operator(&s, &t, &ucfg, &AttackVariables::Weights(vec![0.0]), 1.0)
        })
        .expect("fixture has a harmful sample");
    let r = whole_attack(&s.pre, &s.ds, &s.split, &s.part, &[target], &cfg, UnlearnMethod::FirstOrder).unwrap();
    let UnlearnRequest::Whole { weights, .. } = &r.relaxed_request else { panic!() };
    assert!(weights[0] >= 0.5, "w = {}", weights[0]);
    assert_eq!(r.best_request.removed_indices().unwrap(), vec![target]);
}

#[test]
fn whole_attack_beats_random_masks() {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let s = setup(ArchKind::Lr, 120, 4);
    let targets = s.split.train_indices[10..18].to_vec();
    let cfg = AttackConfig {
        tau: 0.2,
        restarts: 4,
        steps: 30,
        ..small_cfg()
    };
    let ucfg = cfg.unlearn_config(UnlearnMethod::FirstOrder);
    let r = whole_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
    let UnlearnRequest::Whole { weights, .. } = &r.best_request else { panic!() };
    let k = weights.iter().filter(|&&w| w == 1.0).count();
    let attacked = objective_via_operator(&s, &targets, &ucfg, &AttackVariables::Weights(weights.clone()), 1.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let mut mask = vec![0.0; 8];
        for p in (0..8).collect::<Vec<_>>().choose_multiple(&mut rng, k) {
            mask[*p] = 1.0;
        }
        let random = objective_via_operator(&s, &targets, &ucfg, &AttackVariables::Weights(mask), 1.0);
        assert!(attacked >= random - 1e-12, "attack {attacked} < random {random}");
    }
}

fn one_feature_setup() -> Setup {
    let wide = synthetic::generate(&synthetic::SyntheticSpec {
        n: 80,
        dim: 2,
        seed: 21,
        ..Default::default()
    });
    let xs: Vec<f64> = (0..wide.len()).map(|i| wide.row(i)[1]).collect();
    let mut sensitive = std::collections::BTreeMap::new();
    sensitive.insert("gender".to_string(), wide.sensitive("gender").unwrap().to_vec());
    let ds = TabularDataset::new("one", vec!["x1".into()], xs, wide.labels().to_vec(), 2, sensitive).unwrap();
    let sp = split(&ds, 0.8, 0).unwrap();
    let part = partition_by_sensitive(&ds, "gender").unwrap();
    let arch = Architecture::new(ArchKind::Lr, 1, 2).unwrap();
    let pre = train_sgd(&ds, &sp, arch, 20, 16, 0.2, 5).unwrap();
    Setup { ds, split: sp, part, pre }
}

#[test]
fn partial_attack_sign_matches_grid_search() {
    let s = one_feature_setup();
    let eps = 0.3;
    let cfg = AttackConfig {
        tau: 0.5,
        epsilon: eps,
        step_size: Some(0.05),
        steps: 30,
        ..small_cfg()
    };
    let ucfg = cfg.unlearn_config(UnlearnMethod::FirstOrder);
    for &target in &s.split.train_indices[..4] {
        let r = partial_attack(&s.pre, &s.ds, &s.split, &s.part, &[target], &cfg, UnlearnMethod::FirstOrder).unwrap();
        let UnlearnRequest::Partial { deltas, .. } = &r.relaxed_request else { panic!() };
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=10 {
            let d = -eps + 2.0 * eps * k as f64 / 10.0;
            let v = objective_via_operator(&s, &[target], &ucfg, &AttackVariables::Deltas(vec![d]), 1.0);
            if v > best.0 {
                best = (v, d);
            }
        }
        assert_eq!(deltas[0].signum(), best.1.signum(), "target {target}: attack {} grid {}", deltas[0], best.1);
    }
}

#[test]
fn partial_attack_improves_on_zero_request() {
    let s = setup(ArchKind::Lr, 120, 4);
    let targets = s.split.train_indices[..10].to_vec();
    let mut wins = 0;
    for seed in 0..4 {
        let cfg = AttackConfig {
            seed,
            tau: 0.05,
            step_size: Some(0.02),
            ..small_cfg()
        };
        let ucfg = cfg.unlearn_config(UnlearnMethod::FirstOrder);
        let r = partial_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
        let zero = objective_via_operator(&s, &targets, &ucfg, &AttackVariables::Deltas(vec![0.0; 40]), 1.0);
        if r.best_outer_loss >= zero {
            wins += 1;
        }
    }
    assert!(wins >= 3, "{wins}/4");
}

#[test]
fn transfer_to_self_matches_white_box_report() {
    let s = setup(ArchKind::Lr, 100, 4);
    let targets = s.split.train_indices[..5].to_vec();
    let cfg = small_cfg();
    let r = partial_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
    let target = UnlearningTarget::Model {
        pre: &s.pre,
        method: UnlearnMethod::FirstOrder,
    };
    let report = transfer_attack(&r.best_request, &target, &s.ds, &s.split, &s.part, &cfg.unlearn_config(UnlearnMethod::FirstOrder)).unwrap();
    assert_eq!(report, r.report);
}

#[test]
fn transfer_to_sisa_and_unrolling() {
    let s = setup(ArchKind::Lr, 100, 4);
    let targets = s.split.train_indices[..5].to_vec();
    let cfg = small_cfg();
    let r = whole_attack(&s.pre, &s.ds, &s.split, &s.part, &targets, &cfg, UnlearnMethod::FirstOrder).unwrap();
    let tc = TrainingConfig {
        epochs: 5,
        batch_size: 8,
        lr: 0.1,
        seed: 1,
    };
    let sharded = train_shard_models(&s.ds, &s.split, s.pre.arch(), 5, tc).unwrap();
    let ucfg = cfg.unlearn_config(UnlearnMethod::FirstOrder);
    let report = transfer_attack(&r.best_request, &UnlearningTarget::Sharded(&sharded), &s.ds, &s.split, &s.part, &ucfg).unwrap();
    assert!((0.0..=1.0).contains(&report.aeod_after));
    let unrolling = UnlearningTarget::Model {
        pre: &s.pre,
        method: UnlearnMethod::UnrollingSgd,
    };
    transfer_attack(&r.best_request, &unrolling, &s.ds, &s.split, &s.part, &ucfg).unwrap();
    // A relaxed request cannot reach SISA.
    assert!(transfer_attack(&r.relaxed_request, &UnlearningTarget::Sharded(&sharded), &s.ds, &s.split, &s.part, &ucfg).is_err()
        || r.relaxed_request.is_discrete());
}

#[test]
fn transfer_rejects_mismatched_dimensions() {
    let s = setup(ArchKind::Lr, 100, 4);
    let other = synthetic::generate(&synthetic::SyntheticSpec {
        n: 100,
        dim: 5,
        ..Default::default()
    });
    let arch = Architecture::new(ArchKind::Lr, 5, 2).unwrap();
    let sp = split(&other, 0.8, 0).unwrap();
    let (pre5, _) = train_on_indices(&other, &sp.train_indices, arch, TrainingConfig { epochs: 1, batch_size: 8, lr: 0.1, seed: 0 }).unwrap();
    let req = UnlearnRequest::partial(vec![s.split.train_indices[0]], 4, vec![0.0; 4], 0.1).unwrap();
    let target = UnlearningTarget::Model {
        pre: &pre5,
        method: UnlearnMethod::FirstOrder,
    };
    assert!(transfer_attack(&req, &target, &s.ds, &s.split, &s.part, &UnlearnConfig::default()).is_err());
}

#[test]
fn baselines_run_through_the_operator() {
    let s = setup(ArchKind::Lr, 100, 4);
    let ucfg = UnlearnConfig::default();
    for kind in BaselineKind::WHOLE {
        let req = baseline_request(kind, &s.ds, &s.split, &s.part, 8, 0.0, None, 4).unwrap();
        let model = unlearn(&s.pre, &s.ds, &s.split.train_indices, &req, &ucfg).unwrap();
        assert_eq!(model.theta.len(), s.pre.params.theta.len());
    }
}

//! Property checks shared by the proptest suite and the acceptance target.
//! Each returns `Err` with a description of the first violation.

#![allow(dead_code)]

use std::collections::BTreeMap;

use fairforget::attack::Adam;
use fairforget::datasets::{partition_by_sensitive, SplitSpec, TabularDataset};
use fairforget::diffmath::{hessian_vector_product, loss_gradient, mixed_second_derivative, sample_gradient, ParamVector};
use fairforget::fairness::{aeod, fairness_loss, fairness_loss_gradient, FairnessLossKind};
use fairforget::models::{init, logits, mean_loss, ArchKind, Architecture, ModelParams, TrainingConfig};
use fairforget::seeding;
use fairforget::training::{train_on_indices, train_shard_models};
use fairforget::unlearning::{
    sisa_full_retrain, sisa_unlearn, unlearn, unrolling_sgd_unlearn, UnlearnConfig, UnlearnMethod, UnlearnRequest,
};
use rand::Rng;

pub type Check = Result<(), String>;

pub const ATTR: &str = "g";

/// Random dataset with features in [0, 1], binary labels and groups, and
/// every (group, label) cell populated when `n >= 4`.
pub fn dataset(n: usize, dim: usize, seed: u64) -> TabularDataset {
    let mut rng = seeding::rng(seed, 101);
    let features: Vec<f64> = (0..n * dim).map(|_| rng.gen::<f64>()).collect();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let mut groups: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    for (k, (g, y)) in [(0u8, 0usize), (0, 1), (1, 0), (1, 1)].into_iter().enumerate().take(n) {
        groups[k] = g;
        labels[k] = y;
    }
    let mut sensitive = BTreeMap::new();
    sensitive.insert(ATTR.to_string(), groups);
    let names = (0..dim).map(|j| format!("f{j}")).collect();
    TabularDataset::new("prop", names, features, labels, 2, sensitive).unwrap()
}

/// Initialised parameters with every entry perturbed, so biases are non-zero.
pub fn model(kind: ArchKind, dim: usize, seed: u64) -> ModelParams {
    let arch = Architecture::new(kind, dim, 2).unwrap();
    let mut m = init(arch, seed);
    let mut rng = seeding::rng(seed, 102);
    for t in m.theta.iter_mut() {
        *t += 0.3 * (rng.gen::<f64>() - 0.5);
    }
    m
}

fn all_rows(ds: &TabularDataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

fn perturbed(m: &ModelParams, k: usize, h: f64) -> ModelParams {
    let mut t = m.theta.clone();
    t[k] += h;
    m.with_theta(t).unwrap()
}

fn coordinates(p: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeding::rng(seed, 103);
    (0..count).map(|_| rng.gen_range(0..p)).collect()
}

fn close(got: f64, want: f64, rel: f64, floor: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(floor)
}

/// loss_gradient against central differences of the mean loss on 20 random
/// coordinates, 1e-5 relative.
pub fn gradient_fd(kind: ArchKind, seed: u64) -> Check {
    let ds = dataset(8, 3, seed);
    let m = model(kind, 3, seed);
    let idx = all_rows(&ds);
    let batch = ds.batch(&idx);
    let g = loss_gradient(&m, &batch).map_err(|e| e.to_string())?;
    let h = 1e-6;
    for k in coordinates(m.theta.len(), 20, seed) {
        let fd = (mean_loss(&perturbed(&m, k, h), &batch).unwrap() - mean_loss(&perturbed(&m, k, -h), &batch).unwrap())
            / (2.0 * h);
        if !close(g[k], fd, 1e-5, 1e-2) {
            return Err(format!("{kind} gradient coordinate {k}: analytic {} vs fd {fd}", g[k]));
        }
    }
    Ok(())
}

/// Hessian-vector product against central differences of the gradient
/// along a unit direction, 1e-5 relative to the largest entry.
pub fn hvp_fd(kind: ArchKind, seed: u64) -> Check {
    let ds = dataset(6, 3, seed);
    let m = model(kind, 3, seed);
    let idx = all_rows(&ds);
    let batch = ds.batch(&idx);
    let mut rng = seeding::rng(seed, 104);
    let mut v: Vec<f64> = (0..m.theta.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    let hv = hessian_vector_product(&m, &batch, &v).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let shift = |s: f64| {
        let t: Vec<f64> = m.theta.iter().zip(&v).map(|(t, d)| t + s * d).collect();
        loss_gradient(&m.with_theta(ParamVector::from_vec(t)).unwrap(), &batch).unwrap()
    };
    let (gp, gm) = (shift(h), shift(-h));
    let scale = hv.iter().fold(1e-3f64, |a, b| a.max(b.abs()));
    for k in 0..hv.len() {
        let fd = (gp[k] - gm[k]) / (2.0 * h);
        if (fd - hv[k]).abs() > 1e-5 * scale {
            return Err(format!("{kind} HVP entry {k}: analytic {} vs fd {fd} (scale {scale})", hv[k]));
        }
    }
    // Symmetry on a second random probe.
    let u: Vec<f64> = (0..m.theta.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
    let hu = hessian_vector_product(&m, &batch, &u).unwrap();
    let (a, b) = (dot(&u, &hv), dot(&v, &hu));
    if (a - b).abs() > 1e-6 * a.abs().max(b.abs()).max(1e-12) {
        return Err(format!("{kind} HVP not symmetric: {a} vs {b}"));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// d/dx [v . grad_theta loss] against central differences in x, 1e-5
/// relative.
pub fn mixed_fd(kind: ArchKind, seed: u64) -> Check {
    let ds = dataset(4, 3, seed);
    let m = model(kind, 3, seed);
    let mut rng = seeding::rng(seed, 105);
    let v: Vec<f64> = (0..m.theta.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
    let (x, y) = (ds.row(0).to_vec(), ds.label(0));
    let got = mixed_second_derivative(&m, &x, y, &v).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let scale = got.iter().fold(1e-2f64, |a, b| a.max(b.abs()));
    for j in 0..x.len() {
        let at = |s: f64| {
            let mut xs = x.clone();
            xs[j] += s;
            dot(&sample_gradient(&m, &xs, y).unwrap(), &v)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        if (fd - got[j]).abs() > 1e-5 * scale {
            return Err(format!("{kind} mixed derivative feature {j}: analytic {} vs fd {fd}", got[j]));
        }
    }
    Ok(())
}

/// Fairness losses against explicit pair enumeration (1e-12), plus the
/// Jensen bound group <= individual.
pub fn fairness_bruteforce(n: usize, seed: u64) -> Check {
    let ds = dataset(n, 3, seed);
    let part = partition_by_sensitive(&ds, ATTR).map_err(|e| e.to_string())?;
    let m = model(ArchKind::Lr, 3, seed);
    let idx = all_rows(&ds);
    let (s1, s2) = part.restrict(&idx);
    let norm = 1.0 / (s1.len() * s2.len()) as f64;
    let (mut sq, mut dist) = (0.0, 0.0);
    for &i in &s1 {
        for &j in &s2 {
            if ds.label(i) == ds.label(j) {
                let (fi, fj) = (logits(&m, ds.row(i)).unwrap(), logits(&m, ds.row(j)).unwrap());
                let d2: f64 = fi.iter().zip(&fj).map(|(a, b)| (a - b) * (a - b)).sum();
                sq += d2;
                dist += d2.sqrt();
            }
        }
    }
    let want_ind = norm * sq;
    let want_grp = (norm * dist).powi(2);
    let ind = fairness_loss(FairnessLossKind::Individual, &ds, &idx, &part, &m).map_err(|e| e.to_string())?;
    let grp = fairness_loss(FairnessLossKind::Group, &ds, &idx, &part, &m).map_err(|e| e.to_string())?;
    if (ind - want_ind).abs() > 1e-12 * want_ind.max(1.0) {
        return Err(format!("individual loss {ind} vs brute force {want_ind}"));
    }
    if (grp - want_grp).abs() > 1e-12 * want_grp.max(1.0) {
        return Err(format!("group loss {grp} vs brute force {want_grp}"));
    }
    if grp > ind * (1.0 + 1e-12) + 1e-15 {
        return Err(format!("Jensen bound violated: group {grp} > individual {ind}"));
    }
    Ok(())
}

/// fairness_loss_gradient against central differences on 20 coordinates,
/// 1e-5 relative.
pub fn fairness_gradient_fd(kind: ArchKind, loss: FairnessLossKind, seed: u64) -> Check {
    let ds = dataset(10, 3, seed);
    let part = partition_by_sensitive(&ds, ATTR).map_err(|e| e.to_string())?;
    let m = model(kind, 3, seed);
    let idx = all_rows(&ds);
    let g = fairness_loss_gradient(loss, &ds, &idx, &part, &m).map_err(|e| e.to_string())?;
    let f = |p: &ModelParams| fairness_loss(loss, &ds, &idx, &part, p).unwrap();
    let h = 1e-6;
    for k in coordinates(m.theta.len(), 20, seed) {
        let fd = (f(&perturbed(&m, k, h)) - f(&perturbed(&m, k, -h))) / (2.0 * h);
        if !close(g[k], fd, 1e-5, 1e-2) {
            return Err(format!("{kind} {loss} fairness gradient coordinate {k}: analytic {} vs fd {fd}", g[k]));
        }
    }
    Ok(())
}

/// AEOD lies in [0, 1], ignores index order, and is unchanged by swapping
/// the group labels.
pub fn aeod_invariants(n: usize, seed: u64) -> Check {
    let ds = dataset(n, 3, seed);
    let part = partition_by_sensitive(&ds, ATTR).unwrap();
    let m = model(ArchKind::Mlp, 3, seed);
    let mut idx = all_rows(&ds);
    let a = aeod(&m, &ds, &idx, &part).map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&a) {
        return Err(format!("AEOD {a} outside [0, 1]"));
    }
    idx.reverse();
    let b = aeod(&m, &ds, &idx, &part).unwrap();
    let flipped: Vec<u8> = ds.sensitive(ATTR).unwrap().iter().map(|g| 1 - g).collect();
    let mut s = BTreeMap::new();
    s.insert(ATTR.to_string(), flipped);
    let ds2 = TabularDataset::new(
        "flip",
        ds.feature_names().to_vec(),
        ds.features().to_vec(),
        ds.labels().to_vec(),
        2,
        s,
    )
    .unwrap();
    let part2 = partition_by_sensitive(&ds2, ATTR).unwrap();
    let c = aeod(&m, &ds2, &idx, &part2).unwrap();
    if (a - b).abs() > 1e-15 || (a - c).abs() > 1e-15 {
        return Err(format!("AEOD not invariant: {a}, reordered {b}, groups swapped {c}"));
    }
    Ok(())
}

/// Hand-counted confusion-matrix fixture: 8 samples, predictions fixed by
/// an LR model reading feature 0.
pub fn aeod_hand_computed() -> Check {
    // group 0: labels 1,1,0,0 predicted 1,0,1,0 -> TPR 1/2, FPR 1/2
    // group 1: labels 1,1,0,0 predicted 1,1,0,0 -> TPR 1,   FPR 0
    // AEOD = (|1/2 - 1| + |1/2 - 0|) / 2 = 1/2
    let preds = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let labels = vec![1, 1, 0, 0, 1, 1, 0, 0];
    let mut s = BTreeMap::new();
    s.insert(ATTR.to_string(), vec![0, 0, 0, 0, 1, 1, 1, 1]);
    let ds = TabularDataset::new("hand", vec!["p".into()], preds.to_vec(), labels, 2, s).unwrap();
    let part = partition_by_sensitive(&ds, ATTR).unwrap();
    let arch = Architecture::new(ArchKind::Lr, 1, 2).unwrap();
    // logit_1 - logit_0 = 2p - 1
    let m = ModelParams::new(arch, ParamVector::from_vec(vec![-1.0, 1.0, 0.5, -0.5])).unwrap();
    let a = aeod(&m, &ds, &(0..8).collect::<Vec<_>>(), &part).map_err(|e| e.to_string())?;
    if (a - 0.5).abs() > 1e-15 {
        return Err(format!("hand-computed AEOD 0.5, got {a}"));
    }
    Ok(())
}

fn pretrained(kind: ArchKind, seed: u64) -> (TabularDataset, SplitSpec, fairforget::models::PretrainedModel, TrainingConfig) {
    let ds = dataset(40, 3, seed);
    let sp = fairforget::datasets::split(&ds, 0.75, seed).unwrap();
    let cfg = TrainingConfig {
        epochs: 5,
        batch_size: 8,
        lr: 0.1,
        seed,
    };
    let arch = Architecture::new(kind, 3, 2).unwrap();
    let pre = train_on_indices(&ds, &sp.train_indices, arch, cfg).unwrap().0;
    (ds, sp, pre, cfg)
}

/// Empty and all-zero requests leave every operator's model unchanged.
pub fn null_identity(kind: ArchKind, seed: u64) -> Check {
    let (ds, sp, pre, cfg) = pretrained(kind, seed);
    let t = sp.train_indices[..3].to_vec();
    let zero_whole = UnlearnRequest::whole(t.clone(), vec![0.0; 3]).unwrap();
    let zero_partial = UnlearnRequest::partial(t, 3, vec![0.0; 9], 0.5).unwrap();
    for req in [&UnlearnRequest::empty(), &zero_whole, &zero_partial] {
        for method in [UnlearnMethod::FirstOrder, UnlearnMethod::SecondOrder] {
            let out = unlearn(&pre, &ds, &sp.train_indices, req, &UnlearnConfig::with_method(method))
                .map_err(|e| e.to_string())?;
            if out != pre.params {
                return Err(format!("{method} changed the model on a null request"));
            }
        }
    }
    for req in [&UnlearnRequest::empty(), &zero_whole] {
        let out = unrolling_sgd_unlearn(&pre, &ds, req, &UnlearnConfig::with_method(UnlearnMethod::UnrollingSgd))
            .map_err(|e| e.to_string())?;
        if out != pre.params {
            return Err("unrolling changed the model on a null request".into());
        }
    }
    let sharded = train_shard_models(&ds, &sp, pre.params.arch, 3, cfg).unwrap();
    let sisa_cfg = UnlearnConfig::with_method(UnlearnMethod::Sisa);
    for req in [&UnlearnRequest::empty(), &zero_whole] {
        if sisa_unlearn(&sharded, &ds, req, &sisa_cfg).map_err(|e| e.to_string())? != sharded {
            return Err("SISA changed the ensemble on a null request".into());
        }
    }
    Ok(())
}

/// SISA unlearning is bit-identical to retraining the reduced shards.
pub fn sisa_bit_equal(kind: ArchKind, seed: u64) -> Check {
    let (ds, sp, pre, cfg) = pretrained(kind, seed);
    let sharded = train_shard_models(&ds, &sp, pre.params.arch, 3, cfg).unwrap();
    let removed: Vec<usize> = sp.train_indices.iter().copied().step_by(4).collect();
    let req = UnlearnRequest::remove(removed).unwrap();
    let fast = sisa_unlearn(&sharded, &ds, &req, &UnlearnConfig::with_method(UnlearnMethod::Sisa))
        .map_err(|e| e.to_string())?;
    let full = sisa_full_retrain(&ds, &sharded.assignment, pre.params.arch, cfg, &req).map_err(|e| e.to_string())?;
    if fast != full {
        return Err("SISA unlearning differs from a full shard retrain".into());
    }
    Ok(())
}

/// Projected Adam keeps every coordinate in [lo, hi] after each step.
pub fn projection_holds(seed: u64, steps: usize, lo: f64, hi: f64) -> Check {
    let mut rng = seeding::rng(seed, 106);
    let p = 16;
    let mut x: Vec<f64> = (0..p).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
    let mut adam = Adam::new(p, 0.3 * (hi - lo).max(1e-3), 0.9, 0.999, 1e-8);
    for s in 0..steps {
        let g: Vec<f64> = (0..p).map(|_| 100.0 * (rng.gen::<f64>() - 0.5)).collect();
        adam.ascend(&mut x, &g, lo, hi);
        if let Some(v) = x.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(format!("step {s}: {v} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

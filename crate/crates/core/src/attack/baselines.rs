//! Target selection and the random baseline requests.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{GroupPartition, SplitSpec, TabularDataset};
use crate::error::{Error, Result};
use crate::seeding;
use crate::unlearning::UnlearnRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Uniform removals from the training split.
    Rand,
    /// Uniform removals from the smaller sensitive group.
    RandMin,
    /// Uniform removals from the larger sensitive group.
    RandMaj,
    /// Uniform modifications in `[-epsilon, epsilon]` on given targets.
    RandUn,
}

impl BaselineKind {
    pub const WHOLE: [BaselineKind; 3] = [BaselineKind::Rand, BaselineKind::RandMin, BaselineKind::RandMaj];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Rand => "rand",
            BaselineKind::RandMin => "rand-min",
            BaselineKind::RandMaj => "rand-maj",
            BaselineKind::RandUn => "rand-un",
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of targets for a budget fraction, rounded down.
pub fn budget_count(train_size: usize, budget: f64) -> Result<usize> {
    if !(budget > 0.0 && budget < 1.0) {
        return Err(Error::config(format!("budget must lie in (0, 1), got {budget}")));
    }
    let count = (budget * train_size as f64).floor() as usize;
    if count == 0 {
        return Err(Error::config(format!(
            "budget {budget} selects no targets from {train_size} training samples"
        )));
    }
    Ok(count)
}

/// Uniform sample of `floor(budget * |train|)` training indices, sorted.
pub fn select_targets(split: &SplitSpec, budget: f64, seed: u64) -> Result<Vec<usize>> {
    let count = budget_count(split.train_indices.len(), budget)?;
    let mut rng = seeding::rng(seed, seeding::STREAM_TARGETS);
    let mut chosen: Vec<usize> = split.train_indices.choose_multiple(&mut rng, count).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

fn sample(pool: &[usize], count: usize, seed: u64, what: &str) -> Result<Vec<usize>> {
    if count > pool.len() {
        return Err(Error::config(format!(
            "budget of {count} samples exceeds the {} available in the {what}",
            pool.len()
        )));
    }
    let mut rng = seeding::rng(seed, seeding::STREAM_BASELINE);
    let mut chosen: Vec<usize> = pool.choose_multiple(&mut rng, count).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Random baseline request. Whole kinds remove `count` samples; `RandUn`
/// modifies `targets` (or `count` random training samples when `None`).
#[allow(clippy::too_many_arguments)]
pub fn baseline_request(
    kind: BaselineKind,
    ds: &TabularDataset,
    split: &SplitSpec,
    part: &GroupPartition,
    count: usize,
    epsilon: f64,
    targets: Option<&[usize]>,
    seed: u64,
) -> Result<UnlearnRequest> {
    if count == 0 && targets.is_none() {
        return Err(Error::config("a baseline needs at least one target"));
    }
    let (minority, majority) = part.minority_majority(&split.train_indices);
    match kind {
        BaselineKind::Rand => UnlearnRequest::remove(sample(&split.train_indices, count, seed, "training split")?),
        BaselineKind::RandMin => UnlearnRequest::remove(sample(&minority, count, seed, "minority group")?),
        BaselineKind::RandMaj => UnlearnRequest::remove(sample(&majority, count, seed, "majority group")?),
        BaselineKind::RandUn => {
            if !(epsilon >= 0.0) || !epsilon.is_finite() {
                return Err(Error::config(format!("bound must be a finite value >= 0, got {epsilon}")));
            }
            let targets = match targets {
                Some(t) => t.to_vec(),
                None => sample(&split.train_indices, count, seed, "training split")?,
            };
            let mut rng = seeding::rng(seeding::derive(seed, 1), seeding::STREAM_BASELINE);
            let deltas = (0..targets.len() * ds.dim())
                .map(|_| epsilon * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            let mut req = UnlearnRequest::partial(targets, ds.dim(), deltas, epsilon)?;
            req.clamp_to_unit_box(ds);
            Ok(req)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::partition_by_sensitive;
    use std::collections::BTreeMap;

    fn fixture() -> (TabularDataset, SplitSpec, GroupPartition) {
        let n = 100;
        let groups: Vec<u8> = (0..n).map(|i| u8::from(i >= 10)).collect();
        let mut s = BTreeMap::new();
        s.insert("g".to_string(), groups);
        let xs: Vec<f64> = (0..n * 2).map(|k| (k % 7) as f64 / 6.0).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ds = TabularDataset::new("b", vec!["a".into(), "b".into()], xs, labels, 2, s).unwrap();
        let sp = SplitSpec {
            train_indices: (0..n).collect(),
            test_indices: Vec::new(),
            seed: 0,
            train_fraction: 1.0,
        };
        let part = partition_by_sensitive(&ds, "g").unwrap();
        (ds, sp, part)
    }

    #[test]
    fn rand_min_draws_from_minority() {
        let (ds, sp, part) = fixture();
        let r = baseline_request(BaselineKind::RandMin, &ds, &sp, &part, 5, 0.0, None, 3).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.target_indices().iter().all(|&i| i < 10));
        let r = baseline_request(BaselineKind::RandMaj, &ds, &sp, &part, 5, 0.0, None, 3).unwrap();
        assert!(r.target_indices().iter().all(|&i| i >= 10));
        assert!(baseline_request(BaselineKind::RandMin, &ds, &sp, &part, 11, 0.0, None, 3).is_err());
    }

    #[test]
    fn rand_is_reproducible() {
        let (ds, sp, part) = fixture();
        let a = baseline_request(BaselineKind::Rand, &ds, &sp, &part, 7, 0.0, None, 11).unwrap();
        let b = baseline_request(BaselineKind::Rand, &ds, &sp, &part, 7, 0.0, None, 11).unwrap();
        let c = baseline_request(BaselineKind::Rand, &ds, &sp, &part, 7, 0.0, None, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_discrete());
    }

    #[test]
    fn rand_un_respects_bound_and_box() {
        let (ds, sp, part) = fixture();
        let targets = [3, 40, 77];
        let r = baseline_request(BaselineKind::RandUn, &ds, &sp, &part, 0, 0.3, Some(&targets), 1).unwrap();
        assert_eq!(r.target_indices(), &targets);
        for (p, &i) in targets.iter().enumerate() {
            for (d, x) in r.delta_row(p).unwrap().iter().zip(ds.row(i)) {
                assert!(d.abs() <= 0.3);
                assert!((0.0..=1.0).contains(&(x - d)));
            }
        }
    }

    #[test]
    fn target_selection() {
        let (_, sp, _) = fixture();
        let t = select_targets(&sp, 0.2, 5).unwrap();
        assert_eq!(t.len(), 20);
        assert_eq!(t, select_targets(&sp, 0.2, 5).unwrap());
        assert!(select_targets(&sp, 0.001, 5).is_err());
        assert!(select_targets(&sp, 1.5, 5).is_err());
    }
}

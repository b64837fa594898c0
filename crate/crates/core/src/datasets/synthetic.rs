//! Seeded synthetic tabular data with a binary sensitive attribute.
//!
//! Used for fixtures, benchmarks and pipeline smoke runs where the real
//! educational datasets are not available.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TabularDataset;
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    /// Shift of feature 1 between the two groups.
    pub group_shift: f64,
    /// Standard deviation of label noise on the latent score.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 200,
            dim: 6,
            seed: 0,
            group_shift: 0.2,
            noise: 0.25,
        }
    }
}

/// Feature 0 is the group indicator (`gender`), feature 1 is shifted by
/// group, the rest are uniform. The label thresholds a noisy linear score.
pub fn generate(spec: &SyntheticSpec) -> TabularDataset {
    assert!(spec.dim >= 2, "synthetic data needs at least two features");
    let mut rng = seeding::rng(spec.seed, 0x5157);
    let noise = Normal::new(0.0, spec.noise.max(1e-12)).unwrap();
    let weights: Vec<f64> = (0..spec.dim)
        .map(|j| if j == 0 { 0.0 } else { rng.gen_range(0.5..1.5) * if j % 3 == 2 { -1.0 } else { 1.0 } })
        .collect();
    let mut features = Vec::with_capacity(spec.n * spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    let mut groups = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let g: u8 = rng.gen_range(0..2);
        let mut row = vec![0.0; spec.dim];
        row[0] = g as f64;
        for (j, v) in row.iter_mut().enumerate().skip(1) {
            let u: f64 = rng.gen();
            *v = if j == 1 {
                (u * (1.0 - spec.group_shift) + spec.group_shift * g as f64).clamp(0.0, 1.0)
            } else {
                u
            };
        }
        let score: f64 = row.iter().zip(&weights).map(|(x, w)| w * (x - 0.5)).sum::<f64>() + noise.sample(&mut rng);
        labels.push(usize::from(score > 0.0));
        groups.push(g);
        features.extend_from_slice(&row);
    }
    let mut names = vec!["gender".to_string()];
    names.extend((1..spec.dim).map(|j| format!("x{j}")));
    let mut sensitive = BTreeMap::new();
    sensitive.insert("gender".to_string(), groups);
    TabularDataset::new("synthetic", names, features, labels, 2, sensitive).expect("synthetic data is well formed")
}

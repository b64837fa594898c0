//! Fixtures shared by the fairforget benchmarks.

use fairforget::datasets::synthetic::{generate, SyntheticSpec};
use fairforget::datasets::{partition_by_sensitive, split, GroupPartition, SplitSpec, TabularDataset};
use fairforget::models::{ArchKind, Architecture, PretrainedModel, TrainingConfig};
use fairforget::training::train_on_indices;

pub struct Fixture {
    pub ds: TabularDataset,
    pub split: SplitSpec,
    pub part: GroupPartition,
    pub pre: PretrainedModel,
}

/// Synthetic data of `n` rows and `dim` features with a briefly trained
/// model of the given architecture.
pub fn fixture(kind: ArchKind, n: usize, dim: usize) -> Fixture {
    let ds = generate(&SyntheticSpec {
        n,
        dim,
        ..Default::default()
    });
    let split = split(&ds, 0.8, 0).expect("valid split");
    let part = partition_by_sensitive(&ds, "gender").expect("synthetic data registers gender");
    let arch = Architecture::new(kind, dim, 2).expect("valid architecture");
    let cfg = TrainingConfig {
        epochs: 3,
        batch_size: 64,
        lr: 0.05,
        seed: 0,
    };
    let pre = train_on_indices(&ds, &split.train_indices, arch, cfg).expect("training succeeds").0;
    Fixture { ds, split, part, pre }
}

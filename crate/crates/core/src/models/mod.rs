//! Model architectures: logistic regression and ReLU MLPs with one or two
//! hidden layers of width 100.

mod checkpoint;
pub(crate) mod network;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::LayerShape;

use crate::diffmath::ParamVector;
use crate::error::{Error, Result};
use crate::seeding;

pub const HIDDEN_WIDTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Lr,
    Mlp,
    Mlp2,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Lr, ArchKind::Mlp, ArchKind::Mlp2];

    pub fn hidden_sizes(self) -> &'static [usize] {
        match self {
            ArchKind::Lr => &[],
            ArchKind::Mlp => &[HIDDEN_WIDTH],
            ArchKind::Mlp2 => &[HIDDEN_WIDTH, HIDDEN_WIDTH],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Lr => "lr",
            ArchKind::Mlp => "mlp",
            ArchKind::Mlp2 => "mlp2",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ArchKind::Lr => 0,
            ArchKind::Mlp => 1,
            ArchKind::Mlp2 => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ArchKind::Lr),
            "mlp" => Ok(ArchKind::Mlp),
            "mlp2" | "mlp-2" => Ok(ArchKind::Mlp2),
            _ => Err(Error::Lookup {
                kind: "architecture",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(kind: ArchKind, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::config(format!(
                "architecture needs input_dim >= 1 and num_classes >= 2 (got {input_dim}, {num_classes})"
            )));
        }
        Ok(Architecture {
            kind,
            input_dim,
            num_classes,
        })
    }

    /// `[D, hidden..., C]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(self.kind.hidden_sizes());
        dims.push(self.num_classes);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        network::layer_shapes(self)
    }
}

/// A labelled set of feature rows borrowed from somewhere else.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    samples: Vec<(&'a [f64], usize)>,
}

impl<'a> Batch<'a> {
    pub fn new() -> Self {
        Batch { samples: Vec::new() }
    }

    pub fn push(&mut self, x: &'a [f64], y: usize) {
        self.samples.push((x, y));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        self.samples.iter().copied()
    }

    pub fn get(&self, i: usize) -> (&'a [f64], usize) {
        self.samples[i]
    }
}

impl<'a> FromIterator<(&'a [f64], usize)> for Batch<'a> {
    fn from_iter<I: IntoIterator<Item = (&'a [f64], usize)>>(iter: I) -> Self {
        Batch {
            samples: iter.into_iter().collect(),
        }
    }
}

/// Anything that maps a feature row to a class index.
pub trait Classifier: Sync {
    fn input_dim(&self) -> usize;
    fn predict_row(&self, x: &[f64]) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub theta: ParamVector,
}

impl ModelParams {
    pub fn new(arch: Architecture, theta: ParamVector) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::config(format!(
                "parameter vector has length {} but {} architecture needs {}",
                theta.len(),
                arch.kind,
                arch.param_count()
            )));
        }
        Ok(ModelParams { arch, theta })
    }

    pub fn zeros(arch: Architecture) -> Self {
        ModelParams {
            theta: ParamVector::zeros(arch.param_count()),
            arch,
        }
    }

    /// Same architecture, different parameters.
    pub fn with_theta(&self, theta: ParamVector) -> Result<Self> {
        ModelParams::new(self.arch, theta)
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::config(format!(
                "feature vector has length {} but the model expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::config("batch must not be empty"));
        }
        for (x, y) in batch.iter() {
            self.check_input(x)?;
            if y >= self.arch.num_classes {
                return Err(Error::config(format!(
                    "label {y} out of range for {} classes",
                    self.arch.num_classes
                )));
            }
        }
        Ok(())
    }
}

impl Classifier for ModelParams {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&logits_unchecked(self, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedModel {
    pub params: ModelParams,
    pub initial_params: ModelParams,
    pub training_config: TrainingConfig,
}

impl PretrainedModel {
    pub fn arch(&self) -> Architecture {
        self.params.arch
    }
}

/// Fan-in scaled uniform weights, zero biases.
pub fn init(arch: Architecture, seed: u64) -> ModelParams {
    let mut rng = seeding::rng(seed, seeding::STREAM_INIT);
    let mut theta = ParamVector::zeros(arch.param_count());
    for layer in arch.layers() {
        let bound = 1.0 / (layer.inputs as f64).sqrt();
        for w in &mut theta[layer.weight_offset..layer.bias_offset] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    ModelParams { arch, theta }
}

pub fn logits(model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    Ok(logits_unchecked(model, x))
}

pub(crate) fn logits_unchecked(model: &ModelParams, x: &[f64]) -> Vec<f64> {
    let layers = model.arch.layers();
    network::forward(&layers, &model.theta, x).pre.pop().unwrap_or_default()
}

pub fn predict(model: &ModelParams, x: &[f64]) -> Result<usize> {
    Ok(argmax(&logits(model, x)?))
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn mean_loss(model: &ModelParams, batch: &Batch<'_>) -> Result<f64> {
    model.check_batch(batch)?;
    let layers = model.arch.layers();
    let total: f64 = batch
        .iter()
        .map(|(x, y)| {
            let trace = network::forward(&layers, &model.theta, x);
            network::softmax_xent(trace.logits(), y).0
        })
        .sum();
    let loss = total / batch.len() as f64;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::numeric("mean loss"))
    }
}

//! Experiment configuration: a named list of scenarios, each inheriting
//! from a shared `[defaults]` table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, BaselineKind, DEFAULT_BUDGET, DEFAULT_EPSILON, DEFAULT_RESTARTS, DEFAULT_STEPS};
use crate::datasets::DatasetKind;
use crate::error::{Error, Result};
use crate::fairness::FairnessLossKind;
use crate::models::ArchKind;
use crate::training::{DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_SHARDS};
use crate::unlearning::{UnlearnMethod, DEFAULT_TAU};

pub const DEFAULT_DESK_REPETITIONS: usize = 3;
pub const DEFAULT_FULL_REPETITIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Full,
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Lookup {
                kind: "scale",
                name: format!("{other} (expected full or desk)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Whole,
    Partial,
    /// Pre-training metrics only.
    None,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Whole => "whole",
            AttackKind::Partial => "partial",
            AttackKind::None => "none",
        }
    }
}

/// One cell of an experiment grid, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub label: String,
    /// Dataset name (`oulad`, `student-performance`, `xapi`, or any name
    /// when `data` points at a `.ffds` cache).
    pub dataset: String,
    /// Explicit data location; otherwise resolved under the data root.
    pub data: Option<PathBuf>,
    /// Row cap applied at every scale.
    pub subsample: Option<usize>,
    /// Row cap applied at desk scale only.
    pub desk_subsample: Option<usize>,
    pub model: ArchKind,
    pub method: UnlearnMethod,
    pub attack: AttackKind,
    pub fairness: FairnessLossKind,
    pub attribute: String,
    pub budget: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub lambda: f64,
    pub restarts: usize,
    pub steps: usize,
    pub step_size: Option<f64>,
    pub damping: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training learning rate; `None` uses the dataset default.
    pub lr: Option<f64>,
    pub train_fraction: f64,
    pub shards: usize,
    pub baselines: Vec<BaselineKind>,
    /// Architecture the request is crafted on when it differs from `model`.
    pub surrogate_model: Option<ArchKind>,
    /// Operator the request is crafted through when it differs from
    /// `method`. Non-differentiable methods default to first-order.
    pub surrogate_method: Option<UnlearnMethod>,
    /// Plot panel, x value and series name for plot-data output.
    pub panel: Option<String>,
    pub x: Option<String>,
    pub series: Option<String>,
}

impl Default for Scenario {
    fn default() -> Self {
        let a = AttackConfig::default();
        Scenario {
            label: String::new(),
            dataset: String::new(),
            data: None,
            subsample: None,
            desk_subsample: None,
            model: ArchKind::Lr,
            method: UnlearnMethod::FirstOrder,
            attack: AttackKind::Whole,
            fairness: FairnessLossKind::Group,
            attribute: "gender".into(),
            budget: DEFAULT_BUDGET,
            epsilon: DEFAULT_EPSILON,
            tau: DEFAULT_TAU,
            lambda: 1.0,
            restarts: DEFAULT_RESTARTS,
            steps: DEFAULT_STEPS,
            step_size: None,
            damping: a.damping,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: None,
            train_fraction: 0.8,
            shards: DEFAULT_SHARDS,
            baselines: Vec::new(),
            surrogate_model: None,
            surrogate_method: None,
            panel: None,
            x: None,
            series: None,
        }
    }
}

impl Scenario {
    pub fn dataset_kind(&self) -> Option<DatasetKind> {
        self.dataset.parse().ok()
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
            .unwrap_or_else(|| self.dataset_kind().map_or(0.01, DatasetKind::default_learning_rate))
    }

    pub fn row_cap(&self, scale: Scale) -> Option<usize> {
        match scale {
            Scale::Desk => self.desk_subsample.or(self.subsample),
            Scale::Full => self.subsample,
        }
    }

    /// Directory name for this scenario's repetitions.
    pub fn directory(&self, index: usize) -> String {
        format!(
            "{index:02}_{}_{}_{}_{}",
            self.dataset,
            self.model,
            self.method,
            self.attack.name()
        )
    }

    pub fn attack_series(&self) -> String {
        self.series.clone().unwrap_or_else(|| "attack".into())
    }

    pub fn baseline_series(&self, kind: BaselineKind) -> String {
        match &self.series {
            Some(s) => format!("{s}/{kind}"),
            None => kind.to_string(),
        }
    }

    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            restarts: self.restarts,
            steps: self.steps,
            tau: self.tau,
            lambda: self.lambda,
            kind: self.fairness,
            budget: self.budget,
            epsilon: self.epsilon,
            step_size: self.step_size,
            seed,
            damping: self.damping,
            ..AttackConfig::default()
        }
    }

    /// Operator the attack differentiates through.
    pub fn attack_method(&self) -> UnlearnMethod {
        match self.surrogate_method {
            Some(m) => m,
            None if self.method.is_differentiable() && self.surrogate_model.map_or(true, |m| m == self.model) => self.method,
            None => UnlearnMethod::FirstOrder,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::config(format!("scenario {index} ({}): {msg}", self.label)));
        if self.dataset.is_empty() {
            return fail("dataset is required".into());
        }
        if self.dataset_kind().is_none() && self.data.as_ref().map_or(true, |p| p.extension().map_or(true, |e| e != "ffds")) {
            let names: Vec<&str> = DatasetKind::ALL.iter().map(|k| k.name()).collect();
            return fail(format!(
                "unknown dataset `{}` (expected one of: {}, or a `.ffds` file in `data`)",
                self.dataset,
                names.join(", ")
            ));
        }
        if self.attribute.is_empty() {
            return fail("attribute is required".into());
        }
        if self.attack != AttackKind::None && !(self.budget > 0.0 && self.budget < 1.0) {
            return fail(format!("budget must lie in (0, 1), got {}", self.budget));
        }
        if !(self.epsilon >= 0.0) || !(self.tau > 0.0) || !(self.lambda >= 0.0) {
            return fail("epsilon and lambda must be >= 0 and tau > 0".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.restarts == 0 || self.epochs == 0 || self.batch_size == 0 {
            return fail("restarts, epochs and batch_size must be at least 1".into());
        }
        if self.attack == AttackKind::Partial && matches!(self.method, UnlearnMethod::Sisa | UnlearnMethod::UnrollingSgd) {
            return fail(format!("{} unlearning supports whole requests only", self.method));
        }
        if self.surrogate_method.is_some_and(|m| !m.is_differentiable()) {
            return fail("surrogate_method must be first-order or second-order".into());
        }
        if self.attack == AttackKind::Whole && self.baselines.contains(&BaselineKind::RandUn) {
            return fail("rand-un is a partial-request baseline".into());
        }
        if self.attack == AttackKind::Partial && self.baselines.iter().any(|b| *b != BaselineKind::RandUn) {
            return fail("partial attacks compare against rand-un only".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub repetitions: usize,
    pub desk_repetitions: usize,
    pub scenarios: Vec<Scenario>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    name: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "full_repetitions")]
    repetitions: usize,
    #[serde(default = "desk_repetitions")]
    desk_repetitions: usize,
    #[serde(default)]
    defaults: Map<String, Value>,
    #[serde(default, rename = "scenario")]
    scenarios: Vec<Map<String, Value>>,
}

fn full_repetitions() -> usize {
    DEFAULT_FULL_REPETITIONS
}

fn desk_repetitions() -> usize {
    DEFAULT_DESK_REPETITIONS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ExperimentConfig {
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        let value: Value = match format {
            ConfigFormat::Json => serde_json::from_str(text)?,
            ConfigFormat::Toml => {
                let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("invalid TOML: {e}")))?;
                serde_json::to_value(table)?
            }
        };
        let file: ConfigFile = serde_json::from_value(value).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        let scenarios = file
            .scenarios
            .into_iter()
            .enumerate()
            .map(|(i, overrides)| {
                let mut merged = file.defaults.clone();
                merged.extend(overrides);
                serde_json::from_value::<Scenario>(Value::Object(merged))
                    .map_err(|e| Error::config(format!("scenario {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let config = ExperimentConfig {
            name: file.name,
            seed: file.seed,
            repetitions: file.repetitions,
            desk_repetitions: file.desk_repetitions,
            scenarios,
        };
        config.validate()?;
        Ok(config)
    }

    /// Reads a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        };
        Self::parse(&text, format)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("config name must be non-empty and contain no path separators"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("config defines no scenarios"));
        }
        if self.repetitions == 0 || self.desk_repetitions == 0 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate(i)?;
        }
        Ok(())
    }

    pub fn repetitions_for(&self, scale: Scale) -> usize {
        match scale {
            Scale::Full => self.repetitions,
            Scale::Desk => self.desk_repetitions,
        }
    }

    /// First 12 hex digits of the SHA-256 of the resolved configuration and
    /// scale.
    pub fn hash(&self, scale: Scale) -> Result<String> {
        let canonical = serde_json::to_vec(&(self, scale))?;
        Ok(hex::encode(Sha256::digest(&canonical))[..12].to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "demo"
seed = 3
repetitions = 2

[defaults]
dataset = "student-performance"
attack = "whole"
baselines = ["rand", "rand-min"]

[[scenario]]
model = "lr"

[[scenario]]
model = "mlp"
budget = 0.1
fairness = "individual"
"#;

    #[test]
    fn defaults_merge_into_scenarios() {
        let c = ExperimentConfig::parse(SAMPLE, ConfigFormat::Toml).unwrap();
        assert_eq!(c.scenarios.len(), 2);
        assert_eq!(c.desk_repetitions, DEFAULT_DESK_REPETITIONS);
        assert_eq!(c.scenarios[0].budget, DEFAULT_BUDGET);
        assert_eq!(c.scenarios[1].budget, 0.1);
        assert_eq!(c.scenarios[1].model, ArchKind::Mlp);
        assert_eq!(c.scenarios[1].baselines, vec![BaselineKind::Rand, BaselineKind::RandMin]);
        assert_eq!(c.scenarios[0].learning_rate(), 0.001);
    }

    #[test]
    fn json_and_toml_agree() {
        let t = ExperimentConfig::parse(SAMPLE, ConfigFormat::Toml).unwrap();
        let json = r#"{"name":"demo","seed":3,"repetitions":2,
            "defaults":{"dataset":"student-performance","attack":"whole","baselines":["rand","rand-min"]},
            "scenario":[{"model":"lr"},{"model":"mlp","budget":0.1,"fairness":"individual"}]}"#;
        let j = ExperimentConfig::parse(json, ConfigFormat::Json).unwrap();
        assert_eq!(t, j);
        assert_eq!(t.hash(Scale::Desk).unwrap(), j.hash(Scale::Desk).unwrap());
        assert_ne!(t.hash(Scale::Desk).unwrap(), t.hash(Scale::Full).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let bad = SAMPLE.replace("budget = 0.1", "budget = 1.5");
        assert!(ExperimentConfig::parse(&bad, ConfigFormat::Toml).is_err());
        let unknown = SAMPLE.replace("budget = 0.1", "bugdet = 0.1");
        assert!(ExperimentConfig::parse(&unknown, ConfigFormat::Toml).is_err());
        let dataset = SAMPLE.replace("student-performance", "mnist");
        assert!(ExperimentConfig::parse(&dataset, ConfigFormat::Toml).is_err());
        let partial_sisa = SAMPLE.replace("attack = \"whole\"", "attack = \"partial\"\nmethod = \"sisa\"");
        assert!(ExperimentConfig::parse(&partial_sisa, ConfigFormat::Toml).is_err());
    }
}
